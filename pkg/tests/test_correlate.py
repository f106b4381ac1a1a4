import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dipole_qrng.correlate import (
    G2Curve,
    _half_bins,
    fit_antibunching,
    g2_jacobian,
    g2_model,
    histogram_coincidences,
)
from dipole_qrng.errors import ConfigError, FitError
from dipole_qrng.photon_sim import dark_only_scene, default_scene, simulate_scene
from oracles import all_pairs_histogram

sorted_ps = st.lists(st.integers(0, 20_000), min_size=1, max_size=60).map(sorted)


@given(sorted_ps, sorted_ps, st.sampled_from([0.05, 0.1, 0.25, 0.333, 1.0]), st.floats(1.0, 6.0))
def test_histogram_equals_all_pairs(a, b, w, maxlag):
    curve = histogram_coincidences(np.array(a), np.array(b), w, maxlag, 50.0)
    k = _half_bins(w, maxlag)
    assert curve.counts.tolist() == all_pairs_histogram(a, b, w * 1000, k).tolist()


@given(sorted_ps, sorted_ps)
def test_histogram_mirror_symmetry(a, b):
    ab = histogram_coincidences(np.array(a), np.array(b), 0.1, 3.0, 50.0).counts
    ba = histogram_coincidences(np.array(b), np.array(a), 0.1, 3.0, 50.0).counts
    assert ab.tolist() == ba[::-1].tolist()


def test_boundary_lag_rounds_away_from_zero():
    # lag of exactly half a bin: +50 ps goes to bin +1, -50 ps to bin -1
    c = histogram_coincidences(np.array([1000]), np.array([950, 1050]), 0.1, 0.3, 1.0)
    assert c.lags_ns.tolist() == pytest.approx([-0.2, -0.1, 0.0, 0.1, 0.2])
    assert c.counts.tolist() == [0, 1, 0, 1, 0]


def test_normalization():
    c = histogram_coincidences(np.array([0, 10]), np.array([5]), 1.0, 2.0, 100.0)
    assert c.norm_factor == pytest.approx((2 / 100) * (1 / 100) * 1.0 * 100)
    assert np.allclose(c.normalized, c.counts / c.norm_factor)


@pytest.mark.parametrize(
    "a, b, match",
    [
        ([], [1], "empty"),
        ([1], [], "empty"),
        ([5, 1], [1], "sorted"),
    ],
)
def test_bad_streams(a, b, match):
    with pytest.raises(ValueError, match=match):
        histogram_coincidences(np.array(a, dtype=np.int64), np.array(b, dtype=np.int64), 0.1, 1.0)


def test_bad_bins():
    with pytest.raises(ConfigError):
        histogram_coincidences(np.array([1]), np.array([1]), 0.0, 1.0)
    with pytest.raises(ConfigError):
        histogram_coincidences(np.array([1]), np.array([1]), 1.0, 0.5)


def test_jacobian_matches_finite_differences():
    x = np.linspace(-5, 5, 41)
    a, tau = 0.6, 0.8
    jac = g2_jacobian(x, a, tau)
    h = 1e-6
    da = (g2_model(x, a + h, tau) - g2_model(x, a - h, tau)) / (2 * h)
    dt = (g2_model(x, a, tau + h) - g2_model(x, a, tau - h)) / (2 * h)
    assert np.allclose(jac[:, 0], da, atol=1e-8)
    assert np.allclose(jac[:, 1], dt, atol=1e-8)


@given(st.floats(0.05, 1.0), st.floats(0.2, 2.0))
def test_fit_recovers_noiseless_curve(a, tau):
    curve = G2Curve.from_model(a, tau, tau / 8, 12 * tau)
    fit = fit_antibunching(curve)
    assert fit.a == pytest.approx(a, rel=1e-5, abs=1e-6)
    assert fit.tau0_ns == pytest.approx(tau, rel=1e-5)
    assert fit.identifiable


def test_fit_on_simulated_scene():
    scene = default_scene(4, 1e7, bright=True)
    tags = simulate_scene(scene)
    curve = histogram_coincidences(tags.channel("R1"), tags.channel("T1"), 0.77 / 8, 12 * 0.77, scene.duration_ns)
    fit = fit_antibunching(curve)
    assert fit.g2_at_zero == pytest.approx(0.47, abs=0.05)
    assert not fit.flagged
    d = json.loads(fit.to_json())
    assert set(d) == {"a", "tau0_ns", "g2_at_zero", "std_errors", "residual_rms", "iterations", "flags"}


def test_poisson_scene_flagged_unidentifiable():
    scene = dark_only_scene(seed=7)
    tags = simulate_scene(scene)
    curve = histogram_coincidences(tags.channel("R1"), tags.channel("T1"), 0.77 / 8, 12 * 0.77, scene.duration_ns)
    fit = fit_antibunching(curve)
    assert not fit.identifiable
    assert "unidentifiable" in fit.flags


def test_fit_failure_carries_trace():
    curve = G2Curve.from_model(0.5, 1.37, 0.1, 9.6)
    with pytest.raises(FitError) as exc:
        fit_antibunching(curve, max_iter=1, rtol=0.0)
    assert len(exc.value.trace) >= 2


def test_fit_needs_bins():
    with pytest.raises(ConfigError):
        fit_antibunching(G2Curve.from_model(0.5, 0.8, 1.0, 2.0))


def test_curve_csv():
    c = G2Curve.from_model(0.5, 0.8, 0.1, 0.35)
    lines = c.to_csv().splitlines()
    assert lines[0] == "lag_ns,counts,normalized"
    assert len(lines) == 1 + c.lags_ns.size
    lag, _, g = lines[4].split(",")
    assert float(lag) == 0.0 and math.isclose(float(g), 0.5)
    assert float(lines[5].split(",")[0]) == pytest.approx(0.1)
