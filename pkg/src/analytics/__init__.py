"""Parameter estimation, ground-truth fitting, calibration and evaluation modules"""

from .estimator import FitConfig, FitResult, LossKind, direct_ls_fit, fit_clip, prediction_error
from .gt_fit import corrected_length, fit_envelope
from .calibration import CalibrationRule, latent_to_si, load_rules, si_to_latent, timestep_sensitivity
from .metrics import (
    ConfusionMatrix,
    EvalReport,
    SelectionResult,
    build_report,
    confusion,
    extrapolation_error,
    mae,
    ode_residual,
    select_family,
)
from .runner import ClipOutcome, run_clip, run_clipset
from .robustness import horizon_ablation, integrator_comparison, robustness_sweep, sweep_spread

__all__ = [
    'FitConfig',
    'FitResult',
    'LossKind',
    'direct_ls_fit',
    'fit_clip',
    'prediction_error',
    'corrected_length',
    'fit_envelope',
    'CalibrationRule',
    'latent_to_si',
    'si_to_latent',
    'load_rules',
    'timestep_sensitivity',
    'ConfusionMatrix',
    'EvalReport',
    'SelectionResult',
    'build_report',
    'confusion',
    'extrapolation_error',
    'mae',
    'ode_residual',
    'select_family',
    'ClipOutcome',
    'run_clip',
    'run_clipset',
    'horizon_ablation',
    'integrator_comparison',
    'robustness_sweep',
    'sweep_spread',
]
