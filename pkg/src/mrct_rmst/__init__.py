"""Region-specific RMST treatment effects in multi-regional clinical trials."""

__version__ = "0.1.0"

from .calibration import CalibrationSolution, calibrate_region, effective_sample_size, solve_calibration
from .data import (CalibrationTarget, Dataset, GSpec, RegionPanel, SubjectRecord, evaluate_g,
                   load_dataset, target_from_pooled, write_dataset)
from .estimators import augmented_estimate, hajek_estimate
from .inference import confidence_interval, consistency_test, global_estimate
from .regression import fit_ipcw_rmst_regression, g_formula_estimate
from .survival import RmstEstimate, km_difference, weighted_km_curve, weighted_km_rmst

__all__ = [
    "CalibrationSolution", "CalibrationTarget", "Dataset", "GSpec", "RegionPanel", "RmstEstimate",
    "SubjectRecord", "augmented_estimate", "calibrate_region", "confidence_interval",
    "consistency_test", "effective_sample_size", "evaluate_g", "fit_ipcw_rmst_regression",
    "g_formula_estimate", "global_estimate", "hajek_estimate", "km_difference", "load_dataset",
    "solve_calibration", "target_from_pooled", "weighted_km_curve", "weighted_km_rmst",
    "write_dataset",
]
