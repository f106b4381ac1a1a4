"""Second-order correlation g2(tau) from two time-tag streams and antibunching fits.

The histogram counts every ordered pair ``(t_a, t_b)`` and bins the signed
lag ``t_b - t_a``.  Bin ``k`` covers ``[(k - 1/2) w, (k + 1/2) w]`` so that
lag zero sits in the middle of bin 0; a lag exactly on a boundary goes to
the bin farther from zero, which keeps the histogram mirror-symmetric.
Counts are normalized by the uncorrelated expectation
``rate_a * rate_b * bin_width * total_time``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._kernels import coincidence_sweep
from .errors import ConfigError, FitError
from .timetags import TimeTags

PS_PER_NS = 1000.0


@dataclass(frozen=True)
class G2Curve:
    bin_width_ns: float
    lags_ns: np.ndarray
    counts: np.ndarray
    normalized: np.ndarray
    total_time_ns: float
    rate_a: float
    rate_b: float

    @property
    def norm_factor(self) -> float:
        return self.rate_a * self.rate_b * self.bin_width_ns * self.total_time_ns

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lag_ns", "counts", "normalized"])
        for lag, c, g in zip(self.lags_ns.tolist(), self.counts.tolist(), self.normalized.tolist()):
            w.writerow([repr(float(lag)), repr(c), repr(float(g))])
        return buf.getvalue()

    @classmethod
    def from_model(cls, a, tau0_ns, bin_width_ns, max_lag_ns, *, pairs_per_bin=1e4, total_time_ns=1e9):
        """Noiseless curve sampled from ``1 - a exp(-|lag| / tau0)`` at bin centers."""
        k = _half_bins(bin_width_ns, max_lag_ns)
        lags = np.arange(-k, k + 1) * bin_width_ns
        g = g2_model(lags, a, tau0_ns)
        rate = math.sqrt(pairs_per_bin / (bin_width_ns * total_time_ns))
        return cls(bin_width_ns, lags, g * pairs_per_bin, g, total_time_ns, rate, rate)


def _half_bins(bin_width_ns, max_lag_ns) -> int:
    """Number of whole bins on each side of bin 0 that fit inside ``max_lag_ns``."""
    return int(math.floor(max_lag_ns / bin_width_ns - 0.5 + 1e-9))


def _as_timestamps(stream) -> np.ndarray:
    if isinstance(stream, TimeTags):
        stream = stream.timestamp_ps
    ts = np.asarray(stream)
    if ts.ndim != 1:
        raise ValueError("time-tag stream must be one-dimensional")
    if ts.size == 0:
        raise ValueError("empty time-tag stream: singles rate is undefined")
    if ts.size > 1 and np.any(np.diff(ts) < 0):
        raise ValueError("time-tag stream is not sorted")
    return ts.astype(np.int64, copy=False)


def histogram_coincidences(stream_a, stream_b, bin_width_ns: float, max_lag_ns: float, total_time_ns=None) -> G2Curve:
    """Coincidence histogram of ``stream_b`` relative to ``stream_a``.

    Streams are sorted timestamp arrays in ps (or :class:`TimeTags`).  A
    two-pointer sweep visits only pairs inside the lag window, so the cost
    is O(n + m + pairs).
    ``total_time_ns`` defaults to the span covered by both streams.
    """
    if not (bin_width_ns > 0 and math.isfinite(bin_width_ns)):
        raise ConfigError("bin_width_ns must be > 0")
    if not max_lag_ns >= bin_width_ns:
        raise ConfigError("max_lag_ns must be >= bin_width_ns")
    a = _as_timestamps(stream_a)
    b = _as_timestamps(stream_b)
    width_ps = bin_width_ns * PS_PER_NS
    k_max = _half_bins(bin_width_ns, max_lag_ns)
    counts = coincidence_sweep(a, b, width_ps, k_max)
    if total_time_ns is None:
        span_ps = max(a[-1], b[-1]) - min(a[0], b[0])
        total_time_ns = max(float(span_ps), 1.0) / PS_PER_NS
    rate_a = a.size / total_time_ns
    rate_b = b.size / total_time_ns
    lags = np.arange(-k_max, k_max + 1) * bin_width_ns
    normalized = counts / (rate_a * rate_b * bin_width_ns * total_time_ns)
    return G2Curve(bin_width_ns, lags, counts, normalized, float(total_time_ns), rate_a, rate_b)


def g2_model(lags_ns, a, tau0_ns):
    return 1.0 - a * np.exp(-np.abs(lags_ns) / tau0_ns)


def g2_jacobian(lags_ns, a, tau0_ns):
    """Partial derivatives of :func:`g2_model` w.r.t. ``(a, tau0_ns)``, shape (n, 2)."""
    x = np.abs(np.asarray(lags_ns, dtype=float))
    e = np.exp(-x / tau0_ns)
    return np.column_stack([-e, -a * e * x / tau0_ns**2])


@dataclass(frozen=True)
class AntibunchFit:
    a: float
    tau0_ns: float
    residual_rms: float
    std_errors: tuple
    iterations: int = 0
    flags: tuple = field(default_factory=tuple)

    @property
    def g2_at_zero(self) -> float:
        return 1.0 - self.a

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    @property
    def identifiable(self) -> bool:
        return "unidentifiable" not in self.flags

    def to_dict(self) -> dict:
        d = asdict(self)
        d["std_errors"] = {"a": self.std_errors[0], "tau0_ns": self.std_errors[1]}
        d["g2_at_zero"] = self.g2_at_zero
        d["flags"] = list(self.flags)
        return {k: d[k] for k in ("a", "tau0_ns", "g2_at_zero", "std_errors", "residual_rms", "iterations", "flags")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _initial_guess(curve: G2Curve):
    g = curve.normalized
    a0 = float(min(1.0, max(0.0, 1.0 - g.min())))
    k = (g.size - 1) // 2
    sym = 0.5 * (g[k:] + g[k::-1])
    level = 1.0 - a0 / math.e
    above = np.flatnonzero(sym >= level)
    if above.size and above[0] > 0:
        tau = above[0] * curve.bin_width_ns
    elif above.size:
        tau = 0.5 * curve.bin_width_ns
    else:
        tau = curve.lags_ns[-1] / 3.0
    return a0, float(tau)


def fit_antibunching(curve: G2Curve, *, max_iter: int = 200, rtol: float = 1e-8) -> AntibunchFit:
    """Weighted Gauss-Newton fit of ``g2 = 1 - a exp(-|lag| / tau0)``.

    Bin variances are Poisson, ``max(count, 1) / norm**2``.  Steps are
    projected onto ``0 <= a <= 1`` and ``tau0`` in ``[w/100, 10 * max lag]``
    and halved until the weighted cost decreases.  Parameters stopping on
    a bound are listed in ``flags``; a contrast that is not significant
    (``a < 3 * std_err``) adds ``"unidentifiable"``.
    """
    if curve.lags_ns.size < 5:
        raise ConfigError("fit needs at least 5 bins")
    x = np.asarray(curve.lags_ns, dtype=float)
    y = np.asarray(curve.normalized, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(curve.counts, dtype=float), 1.0)) / curve.norm_factor
    tau_lo = curve.bin_width_ns / 100.0
    tau_hi = 10.0 * float(np.abs(x).max())
    lower = np.array([0.0, tau_lo])
    upper = np.array([1.0, tau_hi])

    def cost(p):
        r = (y - g2_model(x, *p)) / sigma
        return float(r @ r)

    p = np.clip(np.array(_initial_guess(curve)), lower, upper)
    c = cost(p)
    trace = [(0, p[0], p[1], c)]
    converged = False
    for it in range(1, max_iter + 1):
        r = (y - g2_model(x, *p)) / sigma
        jw = g2_jacobian(x, *p) / sigma[:, None]
        step = np.linalg.lstsq(jw, r, rcond=None)[0]
        alpha = 1.0
        for _ in range(60):
            trial = np.clip(p + alpha * step, lower, upper)
            c_trial = cost(trial)
            if c_trial <= c:
                break
            alpha *= 0.5
        else:
            trial, c_trial = p, c
        moved = np.abs(trial - p)
        p, c = trial, c_trial
        trace.append((it, p[0], p[1], c))
        if np.all(moved <= rtol * np.maximum(np.abs(p), 1e-300)):
            converged = True
            break
    if not converged:
        raise FitError(f"antibunching fit did not converge in {max_iter} iterations", trace)

    jw = g2_jacobian(x, *p) / sigma[:, None]
    try:
        cov = np.linalg.inv(jw.T @ jw)
        errs = tuple(float(v) for v in np.sqrt(np.abs(np.diag(cov))))
    except np.linalg.LinAlgError:
        errs = (math.inf, math.inf)
    flags = []
    if p[0] <= lower[0]:
        flags.append("a_at_lower_bound")
    if p[0] >= upper[0]:
        flags.append("a_at_upper_bound")
    if p[1] <= tau_lo * (1 + 1e-12):
        flags.append("tau0_at_lower_bound")
    if p[1] >= tau_hi * (1 - 1e-12):
        flags.append("tau0_at_upper_bound")
    if not all(math.isfinite(e) for e in errs) or p[0] < 3.0 * errs[0] or "a_at_lower_bound" in flags:
        flags.append("unidentifiable")
    resid = y - g2_model(x, *p)
    return AntibunchFit(
        a=float(p[0]),
        tau0_ns=float(p[1]),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        std_errors=errs,
        iterations=it,
        flags=tuple(flags),
    )
