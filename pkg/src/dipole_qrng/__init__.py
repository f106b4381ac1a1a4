"""Model of a beam-splitter-free single-photon random number generator.

Photons from one or more emitters branch into reflection and transmission
detectors; the detector identity of each time tag is the raw bit.  The
package simulates the time-tag stream, checks single-photon character from
g2(tau), debiases the bits and runs an SP 800-22 style test battery.
"""

from .correlate import AntibunchFit, G2Curve, fit_antibunching, g2_model, histogram_coincidences
from .errors import ConfigError, FitError, FormatError, QRNGError
from .extract import (
    BitStream,
    EncodingRule,
    RateReport,
    StreamingCascade,
    debias_cascade,
    debias_stage1,
    debias_von_neumann,
    encode_bits,
    read_qbit,
    write_qbit,
)
from .photon_sim import (
    DetectorParams,
    EmitterParams,
    SceneConfig,
    SplitParams,
    branch_and_detect,
    dark_only_scene,
    default_scene,
    expected_g2_zero,
    simulate_emissions,
    simulate_scene,
    two_emitter_weights,
)
from .randtests import TestParams, TestReport, run_battery
from .timetags import Detector, TimeTag, TimeTags, read_ptag, read_tags, write_ptag

__version__ = "0.1.0"
