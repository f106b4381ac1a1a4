"""Battery runner, reports and the optional second-level analysis."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .battery import TESTS, TestParams, TestResult, _as_bits
from .special import igamc

MIN_BATTERY_LENGTH = 100


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    results: tuple
    alpha: float
    length_bits: int
    params: dict

    @property
    def executed(self) -> list:
        return [r for r in self.results if r.executed]

    @property
    def passed(self) -> bool:
        """All executed tests pass; a report where nothing ran does not pass."""
        ran = self.executed
        return bool(ran) and all(r.passed for r in ran)

    def __getitem__(self, name: str) -> TestResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def failures(self) -> list:
        return [r.name for r in self.executed if not r.passed]

    def to_dict(self) -> dict:
        return {
            "length_bits": self.length_bits,
            "alpha": self.alpha,
            "params": self.params,
            "passed": self.passed,
            "executed": len(self.executed),
            "skipped": len(self.results) - len(self.executed),
            "tests": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "min_p_value", "pass"])
        for r in self.results:
            if r.executed:
                w.writerow([r.name, repr(float(r.min_p_value)), "pass" if r.passed else "fail"])
            else:
                w.writerow([r.name, "", "skipped"])
        return buf.getvalue()


def run_battery(bits, params: TestParams | None = None, *, workers: int = 1) -> TestReport:
    """Run every test on ``bits``; results are returned in fixed order."""
    params = params or TestParams()
    b = _as_bits(bits)
    if b.size < MIN_BATTERY_LENGTH:
        reason = f"battery needs at least {MIN_BATTERY_LENGTH} bits, got {b.size}"
        results = tuple(TestResult(t.test_name, skipped=reason) for t in TESTS)
    elif workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = tuple(pool.map(lambda t: t(b, params), TESTS))
    else:
        results = tuple(t(b, params) for t in TESTS)
    return TestReport(results, params.alpha, int(b.size), asdict(params))


def uniformity_p_value(p_values, bins: int = 10) -> float:
    """Chi-square uniformity of p-values over ``bins`` equal bins."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return math.nan
    counts = np.bincount(np.minimum((p * bins).astype(int), bins - 1), minlength=bins)
    expected = p.size / bins
    chi2 = float(np.sum((counts - expected) ** 2) / expected)
    return float(igamc((bins - 1) / 2.0, chi2 / 2.0))


def p_value_streams(reports) -> dict:
    """Collect p-values across reports, keyed by ``test`` or ``test[label]``."""
    streams = {}
    for rep in reports:
        for r in rep.executed:
            labels = r.labels if len(r.p_values) > 1 else ("",)
            for label, p in zip(labels, r.p_values):
                key = f"{r.name}[{label}]" if label else r.name
                streams.setdefault(key, []).append(p)
    return streams


def second_level(bits, n_sequences: int, params: TestParams | None = None) -> dict:
    """Split ``bits`` into equal sequences and summarize each p-value stream.

    For every stream: pass proportion against the ``(1 - a) +- 3 sigma``
    acceptance interval, and the chi-square uniformity p-value.
    """
    params = params or TestParams()
    b = _as_bits(bits)
    size = b.size // n_sequences
    if n_sequences < 1 or size < MIN_BATTERY_LENGTH:
        raise ValueError("not enough bits for the requested number of sequences")
    reports = [run_battery(b[i * size : (i + 1) * size], params) for i in range(n_sequences)]
    out = {}
    for key, ps in p_value_streams(reports).items():
        ps = np.asarray(ps)
        s = ps.size
        alpha = params.alpha
        prop = float(np.mean(ps >= alpha))
        half = 3.0 * math.sqrt(alpha * (1 - alpha) / s)
        uni = uniformity_p_value(ps)
        out[key] = {
            "sequences": s,
            "proportion": prop,
            "proportion_interval": [1 - alpha - half, 1 - alpha + half],
            "proportion_ok": prop >= 1 - alpha - half,
            "uniformity_p_value": uni,
            "uniformity_ok": bool(uni >= 1e-4) if s >= 55 else None,
        }
    return out
