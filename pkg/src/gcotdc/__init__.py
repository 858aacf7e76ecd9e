"""Behavioral model and calibration engine for a gray-code oscillator TDC.

The package simulates a single-channel fine interpolator whose resolution is
multiplied by a sampling matrix, and implements the two-pass virtual-bin
width calibration that makes the result missing-bin free: a density test
builds per-address compensation triples, a second pass turns occupation into
fixed-point width coefficients, and measurement replays hits through both
tables. Report runners wrap the pieces into seeded, reproducible sweeps.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND, available_backends
from .errors import (
    CalibrationError,
    ConfigError,
    CoverageWarning,
    DeadAddressError,
    InvalidSampleError,
    ProfileError,
    SaturationError,
)
from .channel import (
    GRAY_BITS,
    GRAY_CYCLE,
    MATRIX_ORDERS,
    BinProfile,
    ChannelConfig,
    FineSample,
    TimestampRecord,
    capture_timestamp,
    decode_sample_matrix,
    encode_sample_matrix,
    gray_decode,
    gray_encode,
    read_profile_csv,
    reconstruct_interval,
    synthesize_bin_profile,
    write_profile_csv,
)
from .density import (
    DensityDataset,
    RawHistogram,
    VirtualBinGrid,
    accumulate_raw_histogram,
    build_virtual_grid,
    cumulative_timestamps,
    generate_uniform_hits,
    grid_from_resolution,
    read_density_bin,
    read_histogram_csv,
    uniformity_flags,
    write_density_bin,
    write_histogram_csv,
)
from .vbcm import (
    CalibratedHistogram,
    CalibrationTable,
    CompensatedHistogram,
    CompensationTable,
    accumulate_compensated,
    apply_measurement,
    apply_measurement_exact,
    apply_measurement_hist,
    calibrate_channel,
    compute_compensation,
    compute_width_calibration,
    read_cc_table_bin,
    read_cc_table_csv,
    write_cc_table_bin,
    write_cc_table_csv,
)
from .metrics import (
    EfficiencyRecord,
    LinearityReport,
    RmsReport,
    efficiency_series,
    linearity_from_histogram,
    rms_resolution,
    valid_rms,
    write_linearity_csv,
    write_linearity_json,
)
from .experiments import (
    PRESET_PERIODS_PS,
    ExperimentConfig,
    ReportBundle,
    config_from_dict,
    config_sha256,
    derive_seed,
    load_config,
    read_efficiency_table,
    run_calibrate,
    run_efficiency,
    run_interval_tests,
    run_mbar_sweep,
    run_multichannel,
    run_profile,
    run_resolution_sweep,
    validate_config,
)

__all__ = [
    "__version__",
    "BACKEND",
    "available_backends",
    "CalibrationError",
    "ConfigError",
    "CoverageWarning",
    "DeadAddressError",
    "InvalidSampleError",
    "ProfileError",
    "SaturationError",
    "GRAY_BITS",
    "GRAY_CYCLE",
    "MATRIX_ORDERS",
    "BinProfile",
    "ChannelConfig",
    "FineSample",
    "TimestampRecord",
    "capture_timestamp",
    "decode_sample_matrix",
    "encode_sample_matrix",
    "gray_decode",
    "gray_encode",
    "read_profile_csv",
    "reconstruct_interval",
    "synthesize_bin_profile",
    "write_profile_csv",
    "DensityDataset",
    "RawHistogram",
    "VirtualBinGrid",
    "accumulate_raw_histogram",
    "build_virtual_grid",
    "cumulative_timestamps",
    "generate_uniform_hits",
    "grid_from_resolution",
    "read_density_bin",
    "read_histogram_csv",
    "uniformity_flags",
    "write_density_bin",
    "write_histogram_csv",
    "CalibratedHistogram",
    "CalibrationTable",
    "CompensatedHistogram",
    "CompensationTable",
    "accumulate_compensated",
    "apply_measurement",
    "apply_measurement_exact",
    "apply_measurement_hist",
    "calibrate_channel",
    "compute_compensation",
    "compute_width_calibration",
    "read_cc_table_bin",
    "read_cc_table_csv",
    "write_cc_table_bin",
    "write_cc_table_csv",
    "EfficiencyRecord",
    "LinearityReport",
    "RmsReport",
    "efficiency_series",
    "linearity_from_histogram",
    "rms_resolution",
    "valid_rms",
    "write_linearity_csv",
    "write_linearity_json",
    "PRESET_PERIODS_PS",
    "ExperimentConfig",
    "ReportBundle",
    "config_from_dict",
    "config_sha256",
    "derive_seed",
    "load_config",
    "read_efficiency_table",
    "run_calibrate",
    "run_efficiency",
    "run_interval_tests",
    "run_mbar_sweep",
    "run_multichannel",
    "run_profile",
    "run_resolution_sweep",
    "validate_config",
]
