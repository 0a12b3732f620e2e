"""Robust CUSUM and self-normalised tests for parameter change in GARCH(1,1)."""

from ._accel import backend
from .detect import (SegmentationConfig, SegmentationResult, TestKind, TestResult,
                     TruncationSpec, binary_segmentation, run_test, truncate)
from .estimate import FitOptions, FitResult, fit, residuals_squared
from .limits import LimitKind, critical_value, simulate_limit
from .model import ContaminationKind, ContaminationSpec, GarchParams, simulate

__version__ = "0.1.0"

__all__ = [
    "backend", "SegmentationConfig", "SegmentationResult", "TestKind", "TestResult",
    "TruncationSpec", "binary_segmentation", "run_test", "truncate", "FitOptions", "FitResult",
    "fit", "residuals_squared", "LimitKind", "critical_value", "simulate_limit",
    "ContaminationKind", "ContaminationSpec", "GarchParams", "simulate",
]
