"""Seeded time-tag simulation of dipole emitters feeding two opposite channels.

Each emitter is a two-stage renewal process: after an emission it waits an
exponential pump time (rate ``pump_rate_per_ns``) in the ground state and
then an exponential decay time (mean ``lifetime_ns``) before the next photon.
A photon leaves through transmission (T1) with probability
``prob_transmission``, otherwise through reflection where an HBT split sends
it to R1 or R2.

Sub-seed rule.  The master ``seed`` is never used directly.  Every random
component draws from ``numpy.random.SeedSequence(seed, spawn_key=key)``:

=================  =============
component          spawn_key
=================  =============
emitter ``i``      ``(0, i)``
branching of i     ``(1, i)``
detector jitter d  ``(2, d)``
dark counts d      ``(3, d)``
=================  =============

with ``d`` the detector id (R1=0, R2=1, T1=2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .timetags import Detector, TimeTags

PS_PER_NS = 1000
HARDWARE_DETECTION_RATE_PER_S = 264_000.0
HARDWARE_PROB_REFLECTION = 0.91
HARDWARE_CROSS_G2_ZERO = 0.47
HARDWARE_LIFETIME_NS = 0.77


def _check_positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be a finite number > 0, got {value!r}")


def _check_nonneg(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
        raise ConfigError(f"{name} must be a finite number >= 0, got {value!r}")


def _check_prob(name, value):
    if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class EmitterParams:
    lifetime_ns: float
    pump_rate_per_ns: float
    weight: float = 1.0

    def __post_init__(self):
        _check_positive("lifetime_ns", self.lifetime_ns)
        _check_positive("pump_rate_per_ns", self.pump_rate_per_ns)
        _check_positive("weight", self.weight)

    @property
    def mean_interval_ns(self) -> float:
        return 1.0 / self.pump_rate_per_ns + self.lifetime_ns

    @property
    def emission_rate_per_ns(self) -> float:
        return 1.0 / self.mean_interval_ns

    @property
    def recovery_time_ns(self) -> float:
        """1/e time of the g2 dip, 1 / (pump rate + decay rate)."""
        return 1.0 / (self.pump_rate_per_ns + 1.0 / self.lifetime_ns)


@dataclass(frozen=True)
class SplitParams:
    prob_reflection: float = 0.5

    def __post_init__(self):
        _check_prob("prob_reflection", self.prob_reflection)

    @property
    def prob_transmission(self) -> float:
        return 1.0 - self.prob_reflection


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 1.0
    dead_time_ns: float = 0.0
    dark_rate_per_ns: float = 0.0
    jitter_sigma_ns: float = 0.0

    def __post_init__(self):
        _check_prob("efficiency", self.efficiency)
        _check_nonneg("dead_time_ns", self.dead_time_ns)
        _check_nonneg("dark_rate_per_ns", self.dark_rate_per_ns)
        _check_nonneg("jitter_sigma_ns", self.jitter_sigma_ns)


@dataclass(frozen=True)
class SceneConfig:
    emitters: tuple
    split: SplitParams
    detectors: Mapping
    duration_ns: float
    seed: int
    reflection_hbt_split: float = 0.5

    def __post_init__(self):
        emitters = tuple(self.emitters)
        if not emitters:
            raise ConfigError("a scene needs at least one emitter")
        for e in emitters:
            if not isinstance(e, EmitterParams):
                raise ConfigError(f"emitters must be EmitterParams, got {type(e).__name__}")
        object.__setattr__(self, "emitters", emitters)
        detectors = {Detector.parse(k): v for k, v in dict(self.detectors).items()}
        object.__setattr__(self, "detectors", detectors)
        _check_positive("duration_ns", self.duration_ns)
        _check_prob("reflection_hbt_split", self.reflection_hbt_split)
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        for det, prob in self.routing().items():
            if prob > 0 and det not in detectors:
                raise ConfigError(f"detector {det.name} receives photons but has no parameters")

    def routing(self) -> dict:
        """Probability that an emitted (collected) photon heads to each detector."""
        r = self.split.prob_reflection
        s = self.reflection_hbt_split
        return {Detector.R1: r * s, Detector.R2: r * (1.0 - s), Detector.T1: self.split.prob_transmission}

    def collection(self) -> np.ndarray:
        """Per-emitter collection factor, weight relative to the brightest emitter."""
        w = np.array([e.weight for e in self.emitters], dtype=float)
        return w / w.max()

    def with_seed(self, seed: int) -> "SceneConfig":
        return replace(self, seed=seed)


def sub_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(key))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _renewal_times(draw_gaps, expected, duration_ns) -> np.ndarray:
    """Cumulate chunks of gaps until ``duration_ns`` is passed."""
    chunk = int(expected * 1.02 + 6.0 * math.sqrt(expected) + 64)
    parts = []
    t0 = 0.0
    while True:
        times = t0 + np.cumsum(draw_gaps(chunk))
        if times[-1] >= duration_ns:
            parts.append(times[times < duration_ns])
            break
        parts.append(times)
        t0 = times[-1]
        chunk = max(64, chunk // 4)
    return np.concatenate(parts)


def simulate_emissions(emitter: EmitterParams, duration_ns: float, seed) -> np.ndarray:
    """Emission times (ns) of one emitter started in its ground state at t = 0."""
    if not isinstance(emitter, EmitterParams):
        raise ConfigError("emitter must be EmitterParams")
    _check_positive("duration_ns", duration_ns)
    rng = _rng(seed)
    pump_mean = 1.0 / emitter.pump_rate_per_ns

    def gaps(n):
        return rng.exponential(pump_mean, n) + rng.exponential(emitter.lifetime_ns, n)

    return _renewal_times(gaps, duration_ns / emitter.mean_interval_ns, duration_ns)


def _dead_time_filter(ts: np.ndarray, dead_ps: int) -> np.ndarray:
    """Non-paralyzable dead time on a sorted timestamp array.

    Spacing below one picosecond is never accepted, so the result is strictly
    increasing even with zero dead time.
    """
    dead = max(int(dead_ps), 1)
    if ts.size < 2:
        return ts
    close = np.flatnonzero(np.diff(ts) < dead) + 1
    if close.size == 0:
        return ts
    # Events not listed in ``close`` sit >= dead after their predecessor and
    # are therefore always accepted; only close events need the sequential rule.
    keep = np.ones(ts.size, dtype=bool)
    t = ts.tolist()
    prev_j = -2
    last = 0
    for j in close.tolist():
        if j - 1 != prev_j:
            last = t[j - 1]
        if t[j] - last >= dead:
            last = t[j]
        else:
            keep[j] = False
        prev_j = j
    return ts[keep]


def _detector_stream(times_ns, det: Detector, params: DetectorParams, scene: SceneConfig) -> np.ndarray:
    duration_ps = int(round(scene.duration_ns * PS_PER_NS))
    ts = np.asarray(times_ns, dtype=float) * PS_PER_NS
    if params.jitter_sigma_ns > 0 and ts.size:
        jitter = _rng(sub_seed(scene.seed, 2, int(det)))
        ts = ts + jitter.normal(0.0, params.jitter_sigma_ns * PS_PER_NS, ts.size)
    ts = np.rint(ts).astype(np.int64)
    ts = ts[(ts >= 0) & (ts < duration_ps)]
    if params.dark_rate_per_ns > 0:
        dark = _rng(sub_seed(scene.seed, 3, int(det)))
        n_dark = dark.poisson(params.dark_rate_per_ns * scene.duration_ns)
        ts = np.concatenate([ts, dark.integers(0, duration_ps, n_dark, dtype=np.int64)])
    ts.sort(kind="stable")
    return _dead_time_filter(ts, int(round(params.dead_time_ns * PS_PER_NS)))


def branch_and_detect(emissions: Sequence[np.ndarray], scene: SceneConfig) -> TimeTags:
    """Route every emitted photon through collection, branching and detectors.

    ``emissions[i]`` holds the emission times (ns) of ``scene.emitters[i]``.
    """
    if len(emissions) != len(scene.emitters):
        raise ConfigError("need one emission list per emitter")
    routing = scene.routing()
    dets = list(Detector)
    cum = np.cumsum([routing[d] for d in dets])
    collect = scene.collection()
    per_det = {d: [] for d in dets}
    for i, times in enumerate(emissions):
        times = np.asarray(times, dtype=float)
        rng = _rng(sub_seed(scene.seed, 1, i))
        times = times[rng.random(times.size) < collect[i]]
        target = np.minimum(np.searchsorted(cum, rng.random(times.size), side="right"), len(dets) - 1)
        eff = np.array([scene.detectors[d].efficiency if d in scene.detectors else 0.0 for d in dets])
        detected = rng.random(times.size) < eff[target]
        for d in dets:
            per_det[d].append(times[detected & (target == int(d))])
    channels = {
        d: _detector_stream(np.concatenate(per_det[d]), d, scene.detectors[d], scene)
        for d in dets
        if d in scene.detectors
    }
    return TimeTags.from_channels(channels)


def _detected_photons(emitter: EmitterParams, q: float, scene: SceneConfig, i: int):
    """Times of the photons of emitter ``i`` that survive thinning with probability ``q``.

    Between two surviving photons lie ``K ~ Geometric(q)`` renewal gaps, so
    the gap is Gamma(K, 1/pump) + Gamma(K, lifetime).  Same law as simulating
    every photon and thinning, at a cost proportional to detections only.
    """
    branch = _rng(sub_seed(scene.seed, 1, i))
    timing = _rng(sub_seed(scene.seed, 0, i))
    pump_mean = 1.0 / emitter.pump_rate_per_ns

    def gaps(n):
        k = branch.geometric(q, n).astype(float)
        return timing.gamma(k, pump_mean) + timing.gamma(k, emitter.lifetime_ns)

    expected = scene.duration_ns * q / emitter.mean_interval_ns
    return _renewal_times(gaps, expected, scene.duration_ns), branch


def simulate_scene(scene: SceneConfig, method: str = "thinned") -> TimeTags:
    """Simulate the whole scene and return the merged, sorted time-tag stream.

    ``method="photon"`` generates every emission with :func:`simulate_emissions`
    and routes it with :func:`branch_and_detect`; ``"thinned"`` (default)
    only generates photons that reach a detector.  Both are exact; they
    consume random numbers differently and so give different streams.
    """
    if method == "photon":
        emissions = [
            simulate_emissions(e, scene.duration_ns, sub_seed(scene.seed, 0, i))
            for i, e in enumerate(scene.emitters)
        ]
        return branch_and_detect(emissions, scene)
    if method != "thinned":
        raise ConfigError(f"unknown simulation method {method!r}")
    routing = scene.routing()
    dets = list(Detector)
    p_det = np.array(
        [routing[d] * (scene.detectors[d].efficiency if d in scene.detectors else 0.0) for d in dets]
    )
    per_det = {d: [] for d in dets}
    for i, (emitter, c) in enumerate(zip(scene.emitters, scene.collection())):
        q = float(c * p_det.sum())
        if q <= 0:
            continue
        times, branch = _detected_photons(emitter, q, scene, i)
        cum = np.cumsum(p_det / p_det.sum())
        target = np.minimum(np.searchsorted(cum, branch.random(times.size), side="right"), len(dets) - 1)
        for d in dets:
            per_det[d].append(times[target == int(d)])
    channels = {
        d: _detector_stream(np.concatenate(per_det[d]) if per_det[d] else np.empty(0), d, scene.detectors[d], scene)
        for d in dets
        if d in scene.detectors
    }
    return TimeTags.from_channels(channels)


def expected_g2_zero(weights: Sequence[float], background_fraction: float = 0.0) -> float:
    """Zero-delay coherence of independent ideal single emitters plus flat background.

    ``weights`` are relative intensities of the emitters; the background takes
    ``background_fraction`` of the total light and is uncorrelated.
    """
    w = np.asarray(list(weights), dtype=float)
    if w.size == 0:
        raise ConfigError("need at least one emitter weight")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ConfigError("emitter weights must be finite and > 0")
    if not 0.0 <= background_fraction < 1.0:
        raise ConfigError("background_fraction must lie in [0, 1)")
    shares = (1.0 - background_fraction) * w / w.sum()
    return float(1.0 - np.sum(shares**2))


def two_emitter_weights(target_g2: float, background_fraction: float = 0.0) -> tuple:
    """Relative weights (bright, dim) of two emitters giving ``target_g2`` at zero delay."""
    q = (1.0 - target_g2) / (1.0 - background_fraction) ** 2
    if not 0.5 <= q <= 1.0:
        raise ConfigError(
            f"g2(0) = {target_g2} is not reachable with two emitters and background {background_fraction}"
        )
    s = 0.5 * (1.0 + math.sqrt(2.0 * q - 1.0))
    return (s, 1.0 - s)


def expected_signal_rates(scene: SceneConfig) -> dict:
    """Mean signal detections per ns at each detector, before dead time."""
    routing = scene.routing()
    flux = sum(e.emission_rate_per_ns * c for e, c in zip(scene.emitters, scene.collection()))
    return {
        d: flux * routing[d] * p.efficiency for d, p in scene.detectors.items()
    }


def default_scene(
    seed: int = 20211,
    duration_ns: float = 1e9,
    *,
    bright: bool = False,
    prob_reflection: float = HARDWARE_PROB_REFLECTION,
    reflection_hbt_split: float = 0.5,
    target_g2: float = HARDWARE_CROSS_G2_ZERO,
    background_fraction: float = 0.03,
    lifetime_ns: float = HARDWARE_LIFETIME_NS,
    pump_rate_per_ns: float = 0.1,
    detection_rate_per_s: float = HARDWARE_DETECTION_RATE_PER_S,
) -> SceneConfig:
    """Two-emitter scene at the reference hardware operating point.

    The emitter weights solve ``1 - sum p_i**2 = target_g2`` with a flat
    background of ``background_fraction`` on every detector.  The default
    variant sets one common detector efficiency so that all detectors together
    register ``detection_rate_per_s``.  ``bright=True`` keeps the same emitters
    and branching but uses unit efficiency and no dead time, which gives
    enough coincidences for g2 fits within ~10 ms of simulated time.
    """
    weights = two_emitter_weights(target_g2, background_fraction)
    emitters = tuple(EmitterParams(lifetime_ns, pump_rate_per_ns, w) for w in weights)
    split = SplitParams(prob_reflection)
    probe = SceneConfig(
        emitters, split, {d: DetectorParams(1.0) for d in Detector}, duration_ns, seed, reflection_hbt_split
    )
    signal = expected_signal_rates(probe)
    if bright:
        efficiency, dead_time, jitter = 1.0, 0.0, 0.02
    else:
        target = detection_rate_per_s * 1e-9 * (1.0 - background_fraction)
        efficiency = target / sum(signal.values())
        if efficiency > 1.0:
            raise ConfigError("requested detection rate exceeds the emitters' photon flux")
        dead_time, jitter = 22.0, 0.02
    ratio = background_fraction / (1.0 - background_fraction)
    detectors = {
        d: DetectorParams(float(efficiency), dead_time, float(ratio * signal[d] * efficiency), jitter)
        for d in Detector
    }
    return SceneConfig(emitters, split, detectors, duration_ns, seed, reflection_hbt_split)


def dark_only_scene(seed: int = 7, duration_ns: float = 1e7, dark_rate_per_ns: float = 0.02) -> SceneConfig:
    """Poissonian scene: emitters present but never detected, dark counts only."""
    emitters = (EmitterParams(HARDWARE_LIFETIME_NS, 0.1),)
    detectors = {d: DetectorParams(0.0, 0.0, dark_rate_per_ns, 0.0) for d in Detector}
    return SceneConfig(emitters, SplitParams(0.5), detectors, duration_ns, seed)
