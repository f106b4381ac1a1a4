import pytest
from hypothesis import given
from hypothesis import strategies as st

from dipole_qrng.config import (
    build_pipeline,
    build_scene,
    correlation_options,
    encoding_rule,
    format_kv,
    parse_kv,
    parse_pair,
    scene_to_kv,
    test_params as resolve_test_params,
)
from dipole_qrng.errors import ConfigError
from dipole_qrng.photon_sim import default_scene
from dipole_qrng.timetags import Detector

FULL = """
# two-level emitter on three ideal detectors
seed = 0x2a
duration_ns = 1e5
split.prob_reflection = 0.91   # R share
emitters.0.lifetime_ns = 0.77
emitters.0.pump_rate_per_ns = 0.1
detectors.R1.efficiency = 1
detectors.R2.efficiency = 1
detectors.T1.efficiency = 1
detectors.T1.dead_time_ns = 22
"""


def test_full_scene_from_keys():
    scene = build_scene(parse_kv(FULL))
    assert scene.seed == 42
    assert scene.split.prob_reflection == 0.91
    assert scene.emitters[0].lifetime_ns == 0.77
    assert scene.detectors[Detector.T1].dead_time_ns == 22.0
    assert scene.detectors[Detector.R1].dead_time_ns == 0.0


def test_grammar_errors():
    with pytest.raises(ConfigError, match=r"<config>:1:"):
        parse_kv("seed 3")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_kv("seed = 1\nseed = 2")
    with pytest.raises(ConfigError, match="empty key"):
        parse_kv(" = 3")


@pytest.mark.parametrize(
    "text, match",
    [
        ("preset = default", "seed"),
        ("preset = default\nseed = 1\nbogus = 2", "bogus"),
        ("preset = default\nseed = 1\nemitters.5.weight = 1", "contiguous"),
        ("preset = default\nseed = 1\nemitters.2.weight = 1", "incomplete"),
        ("preset = default\nseed = 1\ndetectors.X9.efficiency = 1", "X9"),
        ("preset = nope\nseed = 1", "preset"),
        ("preset = default\nseed = 1\nduration_ns = 0", "duration"),
        ("preset = default\nseed = abc", "integer"),
        ("preset = default\nseed = 1\ncorrelation.pairs = R1-T1", "pair"),
        ("preset = default\nseed = 1\ntests.alpha = 2", "alpha"),
        ("preset = default\nseed = 1\ntests.unknown = 2", "unknown"),
        ("preset = default\nseed = 1\nsplit.prob_reflection = 0.9\nsplit.prob_transmission = 0.2", "transmission"),
        ("seed = 1\nduration_ns = 10\nemitters.0.lifetime_ns = 1", "incomplete"),
        ("preset = default\nseed = 1\noutput.format = xml", "format"),
        ("preset = default\nseed = 1\ncorrelation.bin_width_ns = 1\ncorrelation.max_lag_ns = 0.5", "max_lag"),
    ],
)
def test_validation_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        build_pipeline(parse_kv(text))


def test_pairs_must_exist_in_scene():
    text = FULL.replace("detectors.T1.efficiency = 1", "detectors.T1.efficiency = 0")
    build_pipeline(parse_kv(text + "correlation.pairs = R1xT1"))
    no_t1 = "\n".join(l for l in FULL.splitlines() if "T1" not in l).replace("0.91", "1.0")
    with pytest.raises(ConfigError, match="absent"):
        build_pipeline(parse_kv(no_t1 + "\ncorrelation.pairs = R1xT1"))


def test_defaults_scale_with_lifetime():
    opts = correlation_options(parse_kv("emitters.0.lifetime_ns = 2.0"))
    assert opts["bin_width_ns"] == 0.25 and opts["max_lag_ns"] == 24.0
    assert opts["pairs"] == (("R1", "R2"), ("R1", "T1"))


def test_preset_overrides():
    kv = parse_kv("preset = default\nseed = 9\nreflection_hbt_split = 0.7\nemitters.1.weight = 0.5")
    scene = build_scene(kv)
    ref = default_scene(9, reflection_hbt_split=0.7)
    assert scene.reflection_hbt_split == 0.7
    assert scene.detectors == ref.detectors
    assert scene.emitters[1].weight == 0.5


def test_encoding_and_tests_sections():
    rule = encoding_rule(parse_kv("encoding.zero_set = R1, R2\nencoding.one_set = T1"))
    assert rule.one_set == {Detector.T1}
    p = resolve_test_params(parse_kv("tests.alpha = 0.001\ntests.nonoverlapping_all_templates = yes\ntests.serial_m = 8"))
    assert (p.alpha, p.nonoverlapping_all_templates, p.serial_m) == (0.001, True, 8)


@pytest.mark.parametrize("text", ["R1xT1", "r1XT1", " R1×T1 "])
def test_parse_pair(text):
    assert parse_pair(text) == ("R1", "T1")


@given(st.integers(0, 2**64 - 1), st.sampled_from([False, True]), st.floats(0.0, 1.0))
def test_scene_round_trip(seed, bright, hbt):
    scene = default_scene(seed, 1e6, bright=bright, reflection_hbt_split=hbt)
    again = build_scene(parse_kv(format_kv(scene_to_kv(scene))))
    assert again == scene
