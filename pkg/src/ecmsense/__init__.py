"""Second-order RC battery model: simulation, per-SOC identification and Morris screening."""

__version__ = "0.1.0"

from .ecm import CellConfig, CellState, CurrentProfile, VoltageTrace, coulomb_count, simulate, step
from .ident import FitReport, Segment, build_schedule, identify_segment, segment_by_soc, validate_cases
from .morris import (
    MorrisConfig,
    ParameterDistribution,
    SensitivityReport,
    elementary_effect,
    rank_parameters,
    run_morris,
    sample_start_point,
)
from .ocv import OcvCurve, OcvSweep, average_sweeps, eval_ocv, fit_metrics, fit_polynomial
from .params import PARAM_NAMES, ParameterSchedule, ParameterSet

__all__ = [
    "PARAM_NAMES",
    "CellConfig",
    "CellState",
    "CurrentProfile",
    "FitReport",
    "MorrisConfig",
    "OcvCurve",
    "OcvSweep",
    "ParameterDistribution",
    "ParameterSchedule",
    "ParameterSet",
    "Segment",
    "SensitivityReport",
    "VoltageTrace",
    "average_sweeps",
    "build_schedule",
    "coulomb_count",
    "elementary_effect",
    "eval_ocv",
    "fit_metrics",
    "fit_polynomial",
    "identify_segment",
    "rank_parameters",
    "run_morris",
    "sample_start_point",
    "segment_by_soc",
    "simulate",
    "step",
    "validate_cases",
]
