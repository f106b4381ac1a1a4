import json

import numpy as np
import pytest

from dipole_qrng.correlate import G2Curve, fit_antibunching
from dipole_qrng.plotting import plot_battery, plot_g2
from dipole_qrng.randtests import run_battery


@pytest.fixture(scope="module")
def report():
    return run_battery(np.random.default_rng(0).integers(0, 2, 20_000))


@pytest.mark.parametrize("ext, magic", [(".png", b"\x89PNG"), (".svg", b"<?xml"), (".pdf", b"%PDF")])
def test_g2_figure_written(tmp_path, ext, magic):
    curve = G2Curve.from_model(0.47, 0.77, 0.1, 9.0)
    path = tmp_path / f"g2{ext}"
    plot_g2(curve, fit_antibunching(curve), path, title="R1xT1")
    assert path.read_bytes().startswith(magic)


def test_battery_figure_accepts_report_or_dict(tmp_path, report):
    plot_battery(report, tmp_path / "a.png")
    plot_battery(json.loads(report.to_json()), tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


@pytest.mark.parametrize("ext", [".png", ".svg"])
def test_figures_are_deterministic(tmp_path, report, ext):
    curve = G2Curve.from_model(0.5, 0.8, 0.1, 4.0)
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        plot_g2(curve, None, tmp_path / d / f"g2{ext}")
        plot_battery(report, tmp_path / d / f"bat{ext}")
    for name in (f"g2{ext}", f"bat{ext}"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
