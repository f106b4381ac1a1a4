"""SP 800-22 style randomness battery."""

from .battery import (
    TESTS,
    TEST_ORDER,
    TestParams,
    TestResult,
    aperiodic_templates,
    approximate_entropy_test,
    binary_matrix_rank_test,
    block_frequency_test,
    cumulative_sums_test,
    dft_magnitudes,
    dft_test,
    frequency_test,
    linear_complexity,
    linear_complexity_test,
    longest_run_test,
    non_overlapping_template_test,
    overlapping_template_test,
    random_excursions_test,
    random_excursions_variant_test,
    runs_test,
    serial_test,
    universal_test,
)
from .gf2 import gf2_rank, gf2_rank_batch, rank_probability
from .report import TestReport, p_value_streams, run_battery, second_level, uniformity_p_value
from .special import erfc, igamc
