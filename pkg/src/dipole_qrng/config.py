"""Plain-text ``key = value`` configuration for scenes and pipelines.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines
are ignored; a key may appear only once.  Keys::

    preset                         default | bright | dark_only  (base scene)
    seed                           unsigned 64-bit integer (required)
    duration_ns                    > 0
    reflection_hbt_split           [0, 1]
    split.prob_reflection          [0, 1]
    split.prob_transmission        optional, must equal 1 - prob_reflection
    emitters.<i>.lifetime_ns | pump_rate_per_ns | weight
    detectors.<R1|R2|T1>.efficiency | dead_time_ns | dark_rate_per_ns | jitter_sigma_ns
    encoding.zero_set | one_set | discard_set      comma-separated detector ids
    correlation.bin_width_ns | max_lag_ns          ns
    correlation.pairs                              e.g. ``R1xR2, R1xT1``
    tests.<field>                                  any TestParams field
    output.directory | output.format               bin | csv | json

Without ``preset`` and without any ``emitters.*`` or ``detectors.*`` key the
``default`` preset is used.  Without ``preset`` but with such keys the scene
is built only from the keys given, so every emitter and every detector that
receives photons must be listed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .extract import EncodingRule
from .photon_sim import (
    DetectorParams,
    EmitterParams,
    SceneConfig,
    SplitParams,
    HARDWARE_LIFETIME_NS,
    dark_only_scene,
    default_scene,
)
from .randtests import TestParams
from .timetags import Detector

PRESETS = {
    "default": lambda seed, dur, **kw: default_scene(seed, dur, **kw),
    "bright": lambda seed, dur, **kw: default_scene(seed, dur, bright=True, **kw),
    "dark_only": lambda seed, dur, **kw: dark_only_scene(seed, dur),
}
FORMATS = ("bin", "csv", "json")
_EMITTER_FIELDS = {f.name for f in dataclasses.fields(EmitterParams)}
_DETECTOR_FIELDS = {f.name for f in dataclasses.fields(DetectorParams)}
_TEST_FIELDS = {f.name: f for f in dataclasses.fields(TestParams)}


@dataclass(frozen=True)
class PipelineConfig:
    scene: SceneConfig
    encoding: EncodingRule = field(default_factory=EncodingRule.reflection_pair)
    bin_width_ns: float | None = None
    max_lag_ns: float | None = None
    pairs: tuple = (("R1", "R2"), ("R1", "T1"))
    tests: TestParams = field(default_factory=TestParams)
    output_dir: str = "run"
    format: str = "bin"

    def __post_init__(self):
        tau = self.scene.emitters[0].lifetime_ns
        if self.bin_width_ns is None:
            object.__setattr__(self, "bin_width_ns", tau / 8.0)
        if self.max_lag_ns is None:
            object.__setattr__(self, "max_lag_ns", 12.0 * tau)
        if not self.bin_width_ns > 0 or not self.max_lag_ns >= self.bin_width_ns:
            raise ConfigError("need bin_width_ns > 0 and max_lag_ns >= bin_width_ns")
        if self.format not in FORMATS:
            raise ConfigError(f"output.format must be one of {FORMATS}")
        pairs = tuple(parse_pair(p) if isinstance(p, str) else tuple(Detector.parse(d).name for d in p) for p in self.pairs)
        for a, b in pairs:
            for d in (a, b):
                if Detector.parse(d) not in self.scene.detectors:
                    raise ConfigError(f"correlation pair {a}x{b} references detector {d} absent from the scene")
        object.__setattr__(self, "pairs", pairs)


def parse_pair(text: str) -> tuple:
    parts = text.strip().upper().replace("×", "X").split("X")
    if len(parts) != 2:
        raise ConfigError(f"detector pair {text!r} must look like R1xT1")
    try:
        return tuple(Detector.parse(p).name for p in parts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_kv(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into an ordered dict of strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_kv(text, str(path))


def _num(key, value) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{key}: value must be finite")
    return x


def _int(key, value) -> int:
    try:
        return int(str(value), 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _detector_set(key, value) -> frozenset:
    names = [v for v in (s.strip() for s in value.split(",")) if v]
    try:
        return frozenset(Detector.parse(v) for v in names)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def build_scene(kv: dict) -> SceneConfig:
    if "seed" not in kv:
        raise ConfigError("no seed given: set 'seed' in the config or pass --seed (runs must be reproducible)")
    seed = _int("seed", kv["seed"])
    duration = _num("duration_ns", kv["duration_ns"]) if "duration_ns" in kv else None
    preset = kv.get("preset")
    if preset is None and not any(k.startswith(("emitters.", "detectors.")) for k in kv):
        preset = "default"
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {preset!r}")
        # branching changes the per-detector dark rates of a preset, so pass it through
        kw = {}
        if "split.prob_reflection" in kv:
            kw["prob_reflection"] = _num("split.prob_reflection", kv["split.prob_reflection"])
        if "reflection_hbt_split" in kv:
            kw["reflection_hbt_split"] = _num("reflection_hbt_split", kv["reflection_hbt_split"])
        try:
            base = PRESETS[preset](seed if 0 <= seed < 2**64 else 0, 1e9 if duration is None else duration, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        emitters = [dataclasses.asdict(e) for e in base.emitters]
        detectors = {d: dataclasses.asdict(p) for d, p in base.detectors.items()}
        prob_r = base.split.prob_reflection
        hbt = base.reflection_hbt_split
        duration = base.duration_ns
    else:
        emitters, detectors, prob_r, hbt = [], {}, 0.5, 0.5
        if duration is None:
            raise ConfigError("duration_ns is required without a preset")

    for key, value in kv.items():
        parts = key.split(".")
        if parts[0] == "emitters":
            if len(parts) != 3 or parts[2] not in _EMITTER_FIELDS:
                raise ConfigError(f"unknown emitter key {key!r}")
            i = _int(key, parts[1])
            if i < 0 or i > len(emitters):
                raise ConfigError(f"{key}: emitter indices must be contiguous from 0")
            if i == len(emitters):
                emitters.append({})
            emitters[i][parts[2]] = _num(key, value)
        elif parts[0] == "detectors":
            if len(parts) != 3 or parts[2] not in _DETECTOR_FIELDS:
                raise ConfigError(f"unknown detector key {key!r}")
            try:
                det = Detector.parse(parts[1])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            detectors.setdefault(det, {})[parts[2]] = _num(key, value)
        elif key == "split.prob_reflection":
            prob_r = _num(key, value)
        elif key == "reflection_hbt_split":
            hbt = _num(key, value)

    if "split.prob_transmission" in kv:
        t = _num("split.prob_transmission", kv["split.prob_transmission"])
        if abs(t - (1.0 - prob_r)) > 1e-12:
            raise ConfigError("split.prob_transmission must equal 1 - split.prob_reflection")
    try:
        built_emitters = tuple(EmitterParams(**e) for e in emitters)
        built_detectors = {d: DetectorParams(**p) for d, p in detectors.items()}
    except TypeError as exc:
        raise ConfigError(f"incomplete emitter or detector description: {exc}") from None
    return SceneConfig(built_emitters, SplitParams(prob_r), built_detectors, duration, seed, hbt)


_KNOWN_TOP = {"preset", "seed", "duration_ns", "reflection_hbt_split", "split.prob_reflection", "split.prob_transmission"}
_SECTIONS = ("emitters", "detectors", "encoding", "correlation", "tests", "output")


def check_keys(kv: dict) -> None:
    for key in kv:
        if key not in _KNOWN_TOP and key.split(".")[0] not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        if key.startswith(("correlation.", "output.")) and key not in (
            "correlation.bin_width_ns", "correlation.max_lag_ns", "correlation.pairs",
            "output.directory", "output.format",
        ):
            raise ConfigError(f"unknown config key {key!r}")


def encoding_rule(kv: dict) -> EncodingRule:
    enc = {k.split(".", 1)[1]: v for k, v in kv.items() if k.startswith("encoding.")}
    if not enc:
        return EncodingRule.reflection_pair()
    unknown = set(enc) - {"zero_set", "one_set", "discard_set"}
    if unknown:
        raise ConfigError(f"unknown encoding keys {sorted(unknown)}")
    try:
        return EncodingRule(**{k: _detector_set(f"encoding.{k}", v) for k, v in enc.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def test_params(kv: dict) -> TestParams:
    test_kw = {}
    for key, value in kv.items():
        if not key.startswith("tests."):
            continue
        name = key.split(".", 1)[1]
        if name not in _TEST_FIELDS:
            raise ConfigError(f"unknown test parameter {key!r}")
        default = getattr(TestParams(), name)
        if isinstance(default, bool):
            if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ConfigError(f"{key}: expected true or false, got {value!r}")
            test_kw[name] = value.lower() in ("1", "true", "yes")
        elif isinstance(default, str):
            test_kw[name] = value
        elif isinstance(default, float):
            test_kw[name] = _num(key, value)
        else:
            test_kw[name] = _int(key, value)
    try:
        return TestParams(**test_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def correlation_options(kv: dict) -> dict:
    """Bin width, max lag and pairs; defaults scale with the first emitter's lifetime."""
    tau = _num("emitters.0.lifetime_ns", kv["emitters.0.lifetime_ns"]) if "emitters.0.lifetime_ns" in kv else HARDWARE_LIFETIME_NS
    out = {"bin_width_ns": tau / 8.0, "max_lag_ns": 12.0 * tau, "pairs": (("R1", "R2"), ("R1", "T1"))}
    if "correlation.bin_width_ns" in kv:
        out["bin_width_ns"] = _num("correlation.bin_width_ns", kv["correlation.bin_width_ns"])
    if "correlation.max_lag_ns" in kv:
        out["max_lag_ns"] = _num("correlation.max_lag_ns", kv["correlation.max_lag_ns"])
    if "correlation.pairs" in kv:
        out["pairs"] = tuple(parse_pair(p) for p in kv["correlation.pairs"].split(",") if p.strip())
        if not out["pairs"]:
            raise ConfigError("correlation.pairs is empty")
    if not out["bin_width_ns"] > 0 or not out["max_lag_ns"] >= out["bin_width_ns"]:
        raise ConfigError("need correlation.bin_width_ns > 0 and correlation.max_lag_ns >= bin_width_ns")
    return out


def build_pipeline(kv: dict) -> PipelineConfig:
    check_keys(kv)
    scene = build_scene(kv)
    corr = correlation_options({**kv, "emitters.0.lifetime_ns": repr(scene.emitters[0].lifetime_ns)})
    return PipelineConfig(
        scene,
        encoding=encoding_rule(kv),
        tests=test_params(kv),
        output_dir=kv.get("output.directory", "run"),
        format=kv.get("output.format", "bin"),
        **corr,
    )
def scene_to_kv(scene: SceneConfig) -> dict:
    """Inverse of :func:`build_scene` (without preset), for sidecars and round trips."""
    kv = {
        "seed": str(scene.seed),
        "duration_ns": repr(float(scene.duration_ns)),
        "reflection_hbt_split": repr(float(scene.reflection_hbt_split)),
        "split.prob_reflection": repr(float(scene.split.prob_reflection)),
    }
    for i, e in enumerate(scene.emitters):
        for name, value in dataclasses.asdict(e).items():
            kv[f"emitters.{i}.{name}"] = repr(float(value))
    for d in sorted(scene.detectors):
        for name, value in dataclasses.asdict(scene.detectors[d]).items():
            kv[f"detectors.{d.name}.{name}"] = repr(float(value))
    return kv


def format_kv(kv: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in kv.items())
