"""The fifteen SP 800-22 statistical tests.

Every test takes a 0/1 sequence and :class:`TestParams` and returns a
:class:`TestResult`.  Sequences shorter than a test's declared minimum give
a skipped result with the reason, never a pass.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .._kernels import berlekamp_massey
from .gf2 import gf2_rank_batch, rank_probability
from .special import erfc, igamc, normal_cdf


@dataclass(frozen=True)
class TestParams:
    """Battery parameters; defaults follow SP 800-22."""

    __test__ = False  # keep pytest from collecting this class

    alpha: float = 0.01
    block_frequency_m: int = 128
    matrix_rows: int = 32
    matrix_cols: int = 32
    nonoverlapping_template: str = "000000001"
    nonoverlapping_all_templates: bool = False
    nonoverlapping_blocks: int = 8
    overlapping_m: int = 9
    overlapping_block: int = 1032
    universal_l: int | None = None
    universal_q: int | None = None
    linear_complexity_m: int = 500
    serial_m: int = 16
    apen_m: int = 10
    excursion_min_cycles: int = 500

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if set(self.nonoverlapping_template) - {"0", "1"} or not self.nonoverlapping_template:
            raise ValueError("template must be a non-empty 0/1 string")


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    name: str
    p_values: tuple = ()
    labels: tuple = ()
    statistic: object = None
    parameters: dict = field(default_factory=dict)
    passed: bool | None = None
    skipped: str | None = None

    @property
    def executed(self) -> bool:
        return self.skipped is None

    @property
    def min_p_value(self):
        return min(self.p_values) if self.p_values else None

    def to_dict(self) -> dict:
        stat = self.statistic
        if isinstance(stat, np.ndarray):
            stat = stat.tolist()
        return {
            "name": self.name,
            "parameters": self.parameters,
            "statistic": stat,
            "p_values": [float(p) for p in self.p_values],
            "labels": list(self.labels),
            "min_p_value": None if self.min_p_value is None else float(self.min_p_value),
            "passed": self.passed,
            "skipped": self.skipped,
        }


class _Skip(Exception):
    pass


TESTS = []


def _as_bits(bits) -> np.ndarray:
    if hasattr(bits, "to_array"):
        return bits.to_array()
    if isinstance(bits, str):
        return np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
    return np.asarray(bits, dtype=np.uint8)


def battery_test(name, min_length=100):
    """Register a test; ``min_length`` may depend on the parameters."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(bits, params: TestParams | None = None) -> TestResult:
            params = params or TestParams()
            b = _as_bits(bits)
            need = min_length(params) if callable(min_length) else min_length
            if b.size < need:
                return TestResult(name, skipped=f"needs at least {need} bits, got {b.size}")
            try:
                out = fn(b, params)
            except _Skip as exc:
                return TestResult(name, skipped=str(exc))
            p_values, statistic, parameters = out[:3]
            labels = out[3] if len(out) > 3 else ()
            p_values = tuple(float(min(1.0, max(0.0, p))) for p in p_values)
            passed = all(p >= params.alpha for p in p_values)
            return TestResult(name, p_values, tuple(labels), statistic, parameters, passed)

        run.test_name = name
        TESTS.append(run)
        return run

    return wrap


def _windows(bits: np.ndarray, m: int, cyclic: bool) -> np.ndarray:
    """Integer value of every overlapping m-bit window (MSB first)."""
    n = bits.size
    src = np.concatenate([bits, bits[: m - 1]]) if cyclic else bits
    count = n if cyclic else n - m + 1
    vals = np.zeros(max(count, 0), dtype=np.int64)
    for j in range(m):
        vals = (vals << 1) | src[j : j + count]
    return vals


@battery_test("frequency", 1)
def frequency_test(bits, params):
    n = bits.size
    s = 2 * int(bits.sum()) - n
    s_obs = abs(s) / math.sqrt(n)
    return [erfc(s_obs / math.sqrt(2))], s_obs, {}


@battery_test("block_frequency", lambda p: max(100, p.block_frequency_m))
def block_frequency_test(bits, params):
    m = params.block_frequency_m
    n_blocks = bits.size // m
    pi = bits[: n_blocks * m].reshape(n_blocks, m).mean(axis=1)
    chi2 = 4.0 * m * float(np.sum((pi - 0.5) ** 2))
    return [igamc(n_blocks / 2.0, chi2 / 2.0)], chi2, {"M": m, "N": n_blocks}


def _cusum_p(z: float, n: int) -> float:
    if z == 0:
        return 1.0
    sq = math.sqrt(n)
    k1 = np.arange(int((-n / z + 1) / 4), int((n / z - 1) / 4) + 1)
    k2 = np.arange(int((-n / z - 3) / 4), int((n / z - 1) / 4) + 1)
    s1 = np.sum(normal_cdf((4 * k1 + 1) * z / sq) - normal_cdf((4 * k1 - 1) * z / sq))
    s2 = np.sum(normal_cdf((4 * k2 + 3) * z / sq) - normal_cdf((4 * k2 + 1) * z / sq))
    return float(1.0 - s1 + s2)


@battery_test("cumulative_sums")
def cumulative_sums_test(bits, params):
    x = 2 * bits.astype(np.int64) - 1
    n = x.size
    z_fwd = int(np.abs(np.cumsum(x)).max())
    z_bwd = int(np.abs(np.cumsum(x[::-1])).max())
    return [_cusum_p(z_fwd, n), _cusum_p(z_bwd, n)], (z_fwd, z_bwd), {}, ("forward", "backward")


@battery_test("runs", 2)
def runs_test(bits, params):
    n = bits.size
    pi = float(bits.mean())
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        # Frequency prerequisite failed; the runs statistic is not meaningful.
        return [0.0], None, {"pi": pi, "prerequisite": "failed"}
    v_obs = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(v_obs - 2.0 * n * pi * (1 - pi))
    den = 2.0 * math.sqrt(2.0 * n) * pi * (1 - pi)
    return [erfc(num / den)], v_obs, {"pi": pi}


_LONGEST_RUN = (
    # (min n, M, class edges (first = "<= edge", last = ">= edge"), probabilities)
    (750_000, 10_000, (10, 16), (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6_272, 128, (4, 9), (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, (1, 4), (0.2148, 0.3672, 0.2305, 0.1875)),
)


def longest_runs(blocks: np.ndarray) -> np.ndarray:
    """Longest run of ones in each row."""
    c = np.cumsum(blocks, axis=1, dtype=np.int64)
    reset = np.maximum.accumulate(np.where(blocks == 0, c, 0), axis=1)
    return (c - reset).max(axis=1)


@battery_test("longest_run", 128)
def longest_run_test(bits, params):
    n = bits.size
    m, (lo, hi), pi = next((m, e, p) for min_n, m, e, p in _LONGEST_RUN if n >= min_n)
    n_blocks = n // m
    runs = longest_runs(bits[: n_blocks * m].reshape(n_blocks, m))
    nu = np.bincount(np.clip(runs, lo, hi) - lo, minlength=len(pi))
    expected = n_blocks * np.asarray(pi)
    chi2 = float(np.sum((nu - expected) ** 2 / expected))
    k = len(pi) - 1
    return [igamc(k / 2.0, chi2 / 2.0)], chi2, {"M": m, "N": n_blocks, "counts": nu.tolist()}


@battery_test("binary_matrix_rank", lambda p: 38 * p.matrix_rows * p.matrix_cols)
def binary_matrix_rank_test(bits, params):
    m, q = params.matrix_rows, params.matrix_cols
    n_mats = bits.size // (m * q)
    ranks = gf2_rank_batch(bits[: n_mats * m * q].reshape(n_mats, m, q))
    full = min(m, q)
    f = np.array([np.sum(ranks == full), np.sum(ranks == full - 1), np.sum(ranks < full - 1)], dtype=float)
    p_full = rank_probability(full, m, q)
    p_less = rank_probability(full - 1, m, q)
    probs = np.array([p_full, p_less, 1.0 - p_full - p_less])
    chi2 = float(np.sum((f - n_mats * probs) ** 2 / (n_mats * probs)))
    return [math.exp(-chi2 / 2.0)], chi2, {"M": m, "Q": q, "N": n_mats, "counts": f.astype(int).tolist()}


def dft_magnitudes(bits) -> np.ndarray:
    """|DFT| of the +-1 sequence over the first n/2 frequencies."""
    x = 2.0 * np.asarray(bits, dtype=float) - 1.0
    return np.abs(np.fft.rfft(x))[: x.size // 2]


@battery_test("dft", 1000)
def dft_test(bits, params):
    n = bits.size
    mags = dft_magnitudes(bits)
    threshold = math.sqrt(math.log(1.0 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = int(np.count_nonzero(mags < threshold))
    # variance denominator 3.8 rather than 4: the peak count's null variance
    # measured at n = 1e5 is ~1240 vs n*0.95*0.05/3.8 = 1250 (4 gives 1188)
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 3.8)
    return [erfc(abs(d) / math.sqrt(2))], d, {"threshold": threshold, "N1": n1}


def is_aperiodic(template: str) -> bool:
    m = len(template)
    return all(template[k:] != template[: m - k] for k in range(1, m))


def aperiodic_templates(m: int) -> list:
    """All m-bit templates that cannot overlap a shifted copy of themselves."""
    out = []
    for bits in itertools.product("01", repeat=m):
        t = "".join(bits)
        if is_aperiodic(t):
            out.append(t)
    return out


def _nonoverlapping_counts(bits, template: str, n_blocks: int, block: int) -> np.ndarray:
    m = len(template)
    target = int(template, 2)
    hits = np.flatnonzero(_windows(bits[: n_blocks * block], m, False) == target)
    owner = hits // block
    valid = hits - owner * block <= block - m
    hits, owner = hits[valid], owner[valid]
    if is_aperiodic(template):
        return np.bincount(owner, minlength=n_blocks)
    counts = np.zeros(n_blocks, dtype=np.int64)
    next_free = -1
    for h, o in zip(hits.tolist(), owner.tolist()):
        if h >= next_free:
            counts[o] += 1
            next_free = h + m
    return counts


def _nonoverlapping_min_length(p: TestParams) -> int:
    m = len(p.nonoverlapping_template)
    # Expected matches per block (M - m + 1) / 2**m of at least 5.
    return p.nonoverlapping_blocks * (5 * 2**m + m - 1)


@battery_test("non_overlapping_template", _nonoverlapping_min_length)
def non_overlapping_template_test(bits, params):
    n_blocks = params.nonoverlapping_blocks
    block = bits.size // n_blocks
    m = len(params.nonoverlapping_template)
    templates = aperiodic_templates(m) if params.nonoverlapping_all_templates else [params.nonoverlapping_template]
    mu = (block - m + 1) / 2.0**m
    var = block * (1.0 / 2.0**m - (2.0 * m - 1) / 2.0 ** (2 * m))
    p_values, stats = [], []
    for t in templates:
        w = _nonoverlapping_counts(bits, t, n_blocks, block)
        chi2 = float(np.sum((w - mu) ** 2) / var)
        stats.append(chi2)
        p_values.append(igamc(n_blocks / 2.0, chi2 / 2.0))
    params_out = {"m": m, "N": n_blocks, "M": block}
    return p_values, stats if len(stats) > 1 else stats[0], params_out, tuple(templates)


_OVERLAPPING_PI = (0.364091, 0.185659, 0.139381, 0.100571, 0.0704323, 0.139865)


@battery_test("overlapping_template", lambda p: math.ceil(5 / min(_OVERLAPPING_PI)) * p.overlapping_block)
def overlapping_template_test(bits, params):
    m, block = params.overlapping_m, params.overlapping_block
    n_blocks = bits.size // block
    ones = (1 << m) - 1
    hits = np.flatnonzero(_windows(bits[: n_blocks * block], m, False) == ones)
    owner = hits // block
    hits_ok = hits - owner * block <= block - m
    per_block = np.bincount(owner[hits_ok], minlength=n_blocks)
    nu = np.bincount(np.minimum(per_block, 5), minlength=6)
    expected = n_blocks * np.asarray(_OVERLAPPING_PI)
    chi2 = float(np.sum((nu - expected) ** 2 / expected))
    return [igamc(5 / 2.0, chi2 / 2.0)], chi2, {"m": m, "M": block, "N": n_blocks, "counts": nu.tolist()}


_UNIVERSAL_EXPECTED = {
    6: (5.2177052, 2.954), 7: (6.1962507, 3.125), 8: (7.1836656, 3.238), 9: (8.1764248, 3.311),
    10: (9.1723243, 3.356), 11: (10.170032, 3.384), 12: (11.168765, 3.401), 13: (12.168070, 3.410),
    14: (13.167693, 3.416), 15: (14.167488, 3.419), 16: (15.167379, 3.421),
}
_UNIVERSAL_MIN_N = (
    (1_059_061_760, 16), (496_435_200, 15), (231_669_760, 14), (107_560_960, 13), (49_643_520, 12),
    (22_753_280, 11), (10_342_400, 10), (4_654_080, 9), (2_068_480, 8), (904_960, 7), (387_840, 6),
)


def _universal_min_length(p: TestParams) -> int:
    if p.universal_l is None:
        return 387_840
    q = p.universal_q or 10 * 2**p.universal_l
    return (q + 1) * p.universal_l


@battery_test("universal", _universal_min_length)
def universal_test(bits, params):
    n = bits.size
    l = params.universal_l or next(l for min_n, l in _UNIVERSAL_MIN_N if n >= min_n)
    if l not in _UNIVERSAL_EXPECTED:
        raise _Skip(f"no reference statistics for L = {l}")
    q = params.universal_q or 10 * 2**l
    k = n // l - q
    if k <= 0:
        raise _Skip("sequence too short for the initialization segment")
    blocks = bits[: (q + k) * l].reshape(q + k, l)
    vals = blocks @ (1 << np.arange(l - 1, -1, -1))
    pos = np.arange(1, q + k + 1)
    order = np.lexsort((pos, vals))
    prev = np.zeros(q + k, dtype=np.int64)
    same = vals[order][1:] == vals[order][:-1]
    prev[order[1:][same]] = pos[order[:-1][same]]
    fn = float(np.sum(np.log2(pos[q:] - prev[q:]))) / k
    expected, variance = _UNIVERSAL_EXPECTED[l]
    c = 0.7 - 0.8 / l + (4 + 32 / l) * k ** (-3.0 / l) / 15
    sigma = c * math.sqrt(variance / k)
    return [erfc(abs(fn - expected) / (math.sqrt(2) * sigma))], fn, {"L": l, "Q": q, "K": k}


_LC_PI = (0.010417, 0.03125, 0.125, 0.5, 0.25, 0.0625, 0.020833)


def linear_complexity(bits) -> int:
    """Length of the shortest LFSR generating ``bits`` (Berlekamp-Massey)."""
    b = np.asarray(bits, dtype=np.uint8)
    return int(berlekamp_massey(b.reshape(1, -1))[0])


@battery_test("linear_complexity", lambda p: 200 * p.linear_complexity_m)
def linear_complexity_test(bits, params):
    m = params.linear_complexity_m
    n_blocks = bits.size // m
    lc = berlekamp_massey(np.ascontiguousarray(bits[: n_blocks * m].reshape(n_blocks, m)))
    mu = m / 2.0 + (9.0 + (-1) ** (m + 1)) / 36.0 - (m / 3.0 + 2.0 / 9.0) / 2.0**m
    t = (-1) ** m * (lc - mu) + 2.0 / 9.0
    cls = np.searchsorted(np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5]), t, side="left")
    nu = np.bincount(cls, minlength=7)
    expected = n_blocks * np.asarray(_LC_PI)
    chi2 = float(np.sum((nu - expected) ** 2 / expected))
    return [igamc(3.0, chi2 / 2.0)], chi2, {"M": m, "N": n_blocks, "counts": nu.tolist()}


def _cyclic_counts(bits, m: int) -> np.ndarray:
    return np.bincount(_windows(bits, m, True), minlength=1 << m)


def _psi2(counts: np.ndarray, n: int) -> float:
    if counts.size <= 1:
        return 0.0
    return float((counts.size / n) * np.sum(counts.astype(float) ** 2) - n)


@battery_test("serial", lambda p: 2 ** (p.serial_m + 3))
def serial_test(bits, params):
    m, n = params.serial_m, bits.size
    c_m = _cyclic_counts(bits, m)
    c_m1 = c_m.reshape(-1, 2).sum(axis=1)
    c_m2 = c_m1.reshape(-1, 2).sum(axis=1) if m >= 2 else np.array([n])
    psi_m, psi_m1, psi_m2 = _psi2(c_m, n), _psi2(c_m1, n), _psi2(c_m2, n)
    d1 = psi_m - psi_m1
    d2 = psi_m - 2 * psi_m1 + psi_m2
    p1 = igamc(2.0 ** (m - 2), d1 / 2.0)
    p2 = igamc(2.0 ** (m - 3), d2 / 2.0)
    return [p1, p2], (d1, d2), {"m": m}, ("p1", "p2")


def _phi(counts: np.ndarray, n: int) -> float:
    c = counts[counts > 0] / n
    return float(np.sum(c * np.log(c)))


@battery_test("approximate_entropy", lambda p: 2 ** (p.apen_m + 6))
def approximate_entropy_test(bits, params):
    m, n = params.apen_m, bits.size
    c_next = _cyclic_counts(bits, m + 1)
    c_m = c_next.reshape(-1, 2).sum(axis=1)
    apen = _phi(c_m, n) - _phi(c_next, n)
    chi2 = 2.0 * n * (math.log(2) - apen)
    return [igamc(2.0 ** (m - 1), chi2 / 2.0)], chi2, {"m": m, "ApEn": apen}


def _excursion_walk(bits, params):
    s = np.cumsum(2 * bits.astype(np.int64) - 1)
    zeros = np.flatnonzero(s == 0)
    j = zeros.size + (0 if s[-1] == 0 else 1)
    need = max(params.excursion_min_cycles, 0.005 * math.sqrt(bits.size))
    if j < need:
        raise _Skip(f"only {j} cycles, need {need:g}")
    return s, j


_EXCURSION_STATES = (-4, -3, -2, -1, 1, 2, 3, 4)


def excursion_probabilities(x: int) -> np.ndarray:
    """P(state x visited k times in a cycle), k = 0..4 and >= 5."""
    a = 1.0 / (2 * abs(x))
    pi = [1.0 - a] + [a * a * (1.0 - a) ** (k - 1) for k in range(1, 5)] + [a * (1.0 - a) ** 4]
    return np.array(pi)


@battery_test("random_excursions", 1_000_000)
def random_excursions_test(bits, params):
    s, j = _excursion_walk(bits, params)
    cycle = np.cumsum(s == 0) - (s == 0)
    inside = (np.abs(s) <= 4) & (s != 0)
    state_idx = np.where(s > 0, s + 3, s + 4)
    visits = np.bincount(cycle[inside] * 8 + state_idx[inside], minlength=j * 8).reshape(j, 8)
    p_values, stats = [], []
    for col, x in enumerate(_EXCURSION_STATES):
        nu = np.bincount(np.minimum(visits[:, col], 5), minlength=6)
        expected = j * excursion_probabilities(x)
        chi2 = float(np.sum((nu - expected) ** 2 / expected))
        stats.append(chi2)
        p_values.append(igamc(2.5, chi2 / 2.0))
    labels = tuple(f"x={x:+d}" for x in _EXCURSION_STATES)
    return p_values, stats, {"J": j}, labels


_VARIANT_STATES = tuple(x for x in range(-9, 10) if x != 0)


@battery_test("random_excursions_variant", 1_000_000)
def random_excursions_variant_test(bits, params):
    s, j = _excursion_walk(bits, params)
    inside = np.abs(s) <= 9
    counts = np.bincount(s[inside] + 9, minlength=19)
    p_values, stats = [], []
    for x in _VARIANT_STATES:
        xi = int(counts[x + 9])
        stats.append(xi)
        p_values.append(erfc(abs(xi - j) / math.sqrt(2.0 * j * (4.0 * abs(x) - 2.0))))
    labels = tuple(f"x={x:+d}" for x in _VARIANT_STATES)
    return p_values, stats, {"J": j}, labels


TEST_ORDER = tuple(t.test_name for t in TESTS)
