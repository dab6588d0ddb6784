"""
Clip Runner Module

Fits every trial of a clip set, calibrates the fitted parameters and turns
each outcome into results rows: one row per latent parameter plus one per
calibrated physical quantity.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from src.analytics.calibration import CalibrationRule, latent_to_si, load_rules, rule_for
from src.analytics.estimator import (
    FitConfig,
    FitResult,
    direct_ls_fit,
    extract_period,
    fit_clip,
)
from src.analytics.metrics import DEFAULT_TRAIN_FRAMES, EXTRAPOLATION_HORIZONS, extrapolation_error, ode_residual
from src.data.dataio import ResultsRow
from src.data.presets import ClipSet, ClipSpec
from src.physics.base import (
    CalibrationError,
    ClipId,
    FamilyTag,
    InsufficientPeaksError,
    IntegratorKind,
    ParamVector,
    PhysIdError,
    Trajectory,
)
from src.utils import get_contextual_logger, get_logger

logger = get_logger(__name__)

DIRECT_LS_INTEGRATOR = "direct_ls"
DIRECT_LS_LOSS = "least_squares"
# Period-based lengths are scored against the measured length L.
PERIOD_LENGTHS = ("L_period", "L_amplitude_corrected")

Rules = Mapping[Tuple[str, FamilyTag], CalibrationRule]


@dataclass
class ClipOutcome:
    """Rows of one fitted trial, or the error that stopped it"""
    clip_id: ClipId
    rows: List[ResultsRow] = field(default_factory=list)
    fit: Optional[FitResult] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def config_for(spec: ClipSpec, base: FitConfig) -> FitConfig:
    """Apply a preset's start override unless the base config fixes one."""
    if base.init_params is not None or base.init_strategy is not None:
        return base
    if spec.init_params is not None:
        return replace(base, init_params=spec.init_params)
    return replace(base, init_strategy=spec.init_strategy)


def _extrapolation(traj: Trajectory, spec: ClipSpec, params: ParamVector, kind: IntegratorKind) -> Dict[int, float]:
    if traj.n_samples <= DEFAULT_TRAIN_FRAMES + max(EXTRAPOLATION_HORIZONS):
        return {}
    try:
        errors = extrapolation_error(traj, spec.family, params, kind, DEFAULT_TRAIN_FRAMES, EXTRAPOLATION_HORIZONS)
    except PhysIdError as e:
        logger.debug(f"{spec.key}: no extrapolation error ({e})")
        return {}
    return dict(errors)


def _si_values(spec: ClipSpec, traj: Trajectory, params: ParamVector, rules: Rules) -> List[Tuple[str, float, str]]:
    try:
        rule = rule_for(spec.phenomenon, spec.family, rules)
    except CalibrationError as e:
        logger.debug(str(e))
        return []

    period = theta0 = None
    if rule.term('L') is not None and not spec.family.is_coupled:
        try:
            period = extract_period(traj)
        except InsufficientPeaksError:
            period = None
        if 'theta0_deg' in spec.metadata:
            theta0 = math.radians(spec.metadata['theta0_deg'])
    try:
        values = latent_to_si(rule, params, period=period, theta0=theta0, metadata=spec.metadata)
    except CalibrationError as e:
        logger.warning(f"{spec.key}: calibration failed: {e}")
        return []
    return [(v.name, v.value, v.units) for v in values]


def run_clip(
    clipset: ClipSet,
    trial: int,
    config: FitConfig,
    rules: Optional[Rules] = None,
) -> ClipOutcome:
    """
    Fit one trial and build its results rows.

    The apparent-radius family is fitted by least squares with h0 taken
    from the setting metadata; every other family goes through the
    gradient fit. Errors are caught and reported on the outcome.
    """
    spec = clipset.spec
    clip_id = clipset.clip_id(trial)
    traj = clipset.trajectories[trial]
    rules = rules if rules is not None else load_rules()
    log = get_contextual_logger(__name__, clip=str(clip_id))

    fit: Optional[FitResult] = None
    try:
        if spec.family.is_algebraic:
            params = direct_ls_fit(spec.family, traj, fixed={'h0': spec.metadata['h0']})
            residual = ode_residual(traj, spec.family, params)
            integrator, loss_kind, horizon = DIRECT_LS_INTEGRATOR, DIRECT_LS_LOSS, 0
            extrapolation: Dict[int, float] = {}
        else:
            clip_config = config_for(spec, config)
            fit = fit_clip(spec.family, traj, clip_config, clip_id)
            params, residual = fit.final_params, fit.ode_residual
            integrator = clip_config.integrator.value
            loss_kind, horizon = clip_config.loss.value, clip_config.horizon
            extrapolation = _extrapolation(traj, spec, params, clip_config.integrator)
    except PhysIdError as e:
        log.error(f"Fit failed: {e}")
        return ClipOutcome(clip_id, error=f"{clip_id}: {e}")

    common = dict(
        phenomenon=spec.phenomenon,
        setting=spec.setting,
        clip=trial,
        seed=clipset.seed,
        family=str(spec.family),
        integrator=integrator,
        loss_kind=loss_kind,
        horizon=horizon,
        ode_residual=residual,
        diverged=bool(fit.diverged) if fit else False,
        split=clipset.splits[trial] if trial < len(clipset.splits) else '',
        epochs_run=fit.epochs_run if fit else 0,
        final_loss=fit.loss_curve[-1] if fit and fit.loss_curve else math.nan,
        grad_norm_e1=fit.grad_norm_at(1) if fit else math.nan,
        grad_norm_e50=fit.grad_norm_at(50) if fit else math.nan,
        grad_norm_e200=fit.grad_norm_at(200) if fit else math.nan,
        extrap_e10=extrapolation.get(10, math.nan),
        extrap_e25=extrapolation.get(25, math.nan),
        extrap_e50=extrapolation.get(50, math.nan),
    )

    rows = [
        ResultsRow(param_name=name, gt=spec.true_params[name], estimate=value, param_kind='latent', **common)
        for name, value in params.as_dict().items()
    ]
    record = spec.ground_truth_record()
    for name, value, _units in _si_values(spec, traj, params, rules):
        reference = record.get(name)
        if reference is None and name in PERIOD_LENGTHS:
            reference = record.get('L')
        rows.append(ResultsRow(
            param_name=name,
            gt=reference.value if reference else None,
            estimate=value,
            param_kind='si',
            **common,
        ))
    return ClipOutcome(clip_id, rows=rows, fit=fit)


def run_clipset(
    clipset: ClipSet,
    config: FitConfig,
    rules: Optional[Rules] = None,
    trials: Optional[Sequence[int]] = None,
) -> List[ClipOutcome]:
    """Fit the given trials (all by default) in order."""
    rules = rules if rules is not None else load_rules()
    selected = range(len(clipset)) if trials is None else trials
    return [run_clip(clipset, trial, config, rules) for trial in selected]
