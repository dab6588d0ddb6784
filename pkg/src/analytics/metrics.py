"""
Evaluation Metrics Module

Scores fits along the benchmark axes: closeness to ground truth (MAE),
ODE residual, extrapolation beyond the training window, equation-family
selection with its confusion matrix, and the aggregate report built from
results-CSV rows alone.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from src.analytics.estimator import FitConfig, direct_ls_fit, fit_clip, prediction_error
from src.physics.base import (
    DomainError,
    IllPosedFitError,
    IntegratorKind,
    LabelError,
    OdeFamily,
    ParamVector,
    StateShapeError,
    Trajectory,
    TrajectoryTooShortError,
    UnsupportedFamilyError,
)
from src.physics.integrators import advance, is_diverged, resolve_kind
from src.physics.ode_bank import closed_form_positions
from src.utils import get_logger

logger = get_logger(__name__)

EXTRAPOLATION_HORIZONS = (10, 25, 50)
DEFAULT_TRAIN_FRAMES = 100
SELECTION_FALLBACK_EPOCHS = 50
# Candidates whose residual is within SELECTION_TIE_TOL of the best, measured
# against the mean squared frame-to-frame step of the clip, count as tied.
SELECTION_TIE_TOL = 1e-4
SELECTION_TIE_RTOL = 1e-9

CONFIG_COLUMNS = ['family', 'integrator', 'loss_kind', 'horizon']
CLIP_COLUMNS = ['phenomenon', 'setting', 'clip', 'seed'] + CONFIG_COLUMNS


def mae(estimates: Sequence[float], gt: float) -> float:
    """
    Mean absolute error of estimates against one ground-truth value.

    Raises:
        DomainError: If estimates is empty
    """
    values = np.asarray(estimates, dtype=float)
    if values.size == 0:
        raise DomainError("mae of an empty set of estimates")
    return float(np.mean(np.abs(values - gt)))


def mae_with_sigma(estimates: Sequence[float], gt: float) -> Tuple[float, float]:
    """MAE and the population standard deviation of the estimates."""
    error = mae(estimates, gt)
    return error, float(np.std(np.asarray(estimates, dtype=float)))


def trial_ci95(values: Sequence[float]) -> float:
    """Half-width of the Student-t 95% interval on the mean of values."""
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size < 2:
        return math.nan
    sem = float(np.std(arr, ddof=1)) / math.sqrt(arr.size)
    return float(stats.t.ppf(0.975, arr.size - 1)) * sem


def ode_residual(
    traj: Trajectory,
    family: OdeFamily,
    params: ParamVector,
    dt: Optional[float] = None,
    integrator: IntegratorKind = IntegratorKind.EULER_CORRECTED,
    velocity: str = "backward",
) -> float:
    """
    Mean squared one-step prediction error of the physics step.

    Args:
        dt: Frame interval to assume; defaults to the trajectory's own

    Raises:
        TrajectoryTooShortError: If no prediction window fits
    """
    if dt is not None and dt != traj.dt:
        traj = traj.relabel(dt)
    if traj.n_samples < 2:
        raise TrajectoryTooShortError(f"need at least 2 samples, got {traj.n_samples}")
    return prediction_error(family, params, traj, integrator, velocity=velocity)


def extrapolation_error(
    traj: Trajectory,
    family: OdeFamily,
    params: ParamVector,
    integrator: IntegratorKind = IntegratorKind.EULER_CORRECTED,
    t_train: int = DEFAULT_TRAIN_FRAMES,
    ks: Sequence[int] = EXTRAPOLATION_HORIZONS,
) -> List[Tuple[int, float]]:
    """
    Squared position error of an open-loop rollout past the training window.

    The rollout starts at frame t_train, using the backward-difference
    velocity for second-order families, and E_k compares the state after k
    steps with the observed frame t_train + k. A rollout that diverges
    before step k yields E_k = inf.

    Raises:
        TrajectoryTooShortError: If frame t_train + max(ks) does not exist
    """
    ks = sorted(int(k) for k in ks)
    if not ks or ks[0] < 1:
        raise DomainError(f"extrapolation steps must be positive, got {ks}")
    horizon = ks[-1]
    if traj.n_samples <= t_train + horizon:
        raise TrajectoryTooShortError(
            f"extrapolating {horizon} steps from frame {t_train} needs more than "
            f"{t_train + horizon} samples, got {traj.n_samples}"
        )
    if traj.body_count != family.body_count:
        raise StateShapeError(f"{family} expects {family.body_count} bodies, trajectory has {traj.body_count}")
    z = traj.positions

    if family.is_algebraic:
        times = traj.dt * np.array([t_train + k for k in ks], dtype=float)
        predicted, _ = closed_form_positions(family, params, None, times)
        return [(k, float(np.sum((predicted[i] - z[t_train + k]) ** 2))) for i, k in enumerate(ks)]

    kind = resolve_kind(family, integrator)
    if family.is_first_order:
        y = z[t_train][None, :]
    else:
        if t_train < 1:
            raise TrajectoryTooShortError("second-order rollouts need a frame before t_train")
        v = (z[t_train] - z[t_train - 1]) / traj.dt
        y = np.concatenate([z[t_train], v])[None, :]

    p = params.as_array()
    n = family.body_count
    wanted = set(ks)
    errors: Dict[int, float] = {}
    for k in range(1, horizon + 1):
        y, _ = advance(kind, family, p, y, traj.dt)
        if is_diverged(y):
            logger.warning(f"{family}: extrapolation diverged at step {k} from frame {t_train}")
            break
        if k in wanted:
            errors[k] = float(np.sum((y[0, :n] - z[t_train + k]) ** 2))
    return [(k, errors.get(k, math.inf)) for k in ks]


@dataclass
class SelectionResult:
    """Outcome of select_family; scores follow the candidate order"""
    chosen: OdeFamily
    scores: List[float]
    params: List[Optional[ParamVector]] = field(default_factory=list)


def _candidate_fit(
    family: OdeFamily, traj: Trajectory, fixed: Optional[Mapping[str, float]]
) -> ParamVector:
    try:
        return direct_ls_fit(family, traj, dict(fixed) if fixed else None)
    except UnsupportedFamilyError:
        config = FitConfig(epochs=SELECTION_FALLBACK_EPOCHS)
        return fit_clip(family, traj, config).final_params


def select_family(
    traj: Trajectory,
    candidates: Sequence[OdeFamily],
    fixed: Optional[Mapping[str, float]] = None,
) -> SelectionResult:
    """
    Pick the family that best explains a trajectory.

    Each candidate is fitted by the least-squares oracle (falling back to a
    short gradient fit for families that are not linear in their
    parameters) and scored by its one-step residual under RK4 with
    fourth-order central velocities. Candidates that cannot be fitted score
    inf. Residuals closer to the best than SELECTION_TIE_TOL times the mean
    squared frame step count as ties; ties go to fewer parameters, then to
    the earlier candidate. Nested models (a pendulum with zero stiffness on
    a decay curve, constant acceleration on a draining vessel) reproduce
    noiseless clips as well as the true family, so the tie rule decides
    those.

    Raises:
        DomainError: If there are no candidates
        IllPosedFitError: If no candidate can be fitted
    """
    if not candidates:
        raise DomainError("select_family needs at least one candidate")

    scores: List[float] = []
    fitted: List[Optional[ParamVector]] = []
    for family in candidates:
        try:
            params = _candidate_fit(family, traj, fixed)
            score = ode_residual(traj, family, params, integrator=IntegratorKind.RK4, velocity="central4")
        except (IllPosedFitError, TrajectoryTooShortError, StateShapeError, DomainError) as e:
            logger.debug(f"Candidate {family} rejected: {e}")
            params, score = None, math.inf
        if not math.isfinite(score):
            score = math.inf
        scores.append(score)
        fitted.append(params)

    if len(candidates) == 1:
        return SelectionResult(candidates[0], scores, fitted)

    best = min(scores)
    if math.isinf(best):
        raise IllPosedFitError(f"none of {len(candidates)} candidate families could be fitted")
    step = np.diff(traj.positions, axis=0)
    scale = float(np.mean(np.sum(step * step, axis=1))) if len(step) else 0.0
    threshold = best * (1.0 + SELECTION_TIE_RTOL) + SELECTION_TIE_TOL * scale
    tied = [i for i, s in enumerate(scores) if s <= threshold]
    winner = min(tied, key=lambda i: (candidates[i].arity, i))
    logger.debug(f"Selected {candidates[winner]} with residual {scores[winner]:.3g}")
    return SelectionResult(candidates[winner], scores, fitted)


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions"""
    labels: Tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def overall_accuracy(self) -> float:
        return self.correct / self.total if self.total else math.nan

    @property
    def per_class_accuracy(self) -> Dict[str, float]:
        row_sums = self.counts.sum(axis=1)
        return {
            label: (float(self.counts[i, i]) / row_sums[i] if row_sums[i] else math.nan)
            for i, label in enumerate(self.labels)
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'labels': list(self.labels),
            'counts': self.counts.astype(int).tolist(),
            'correct': self.correct,
            'total': self.total,
            'overall_accuracy': self.overall_accuracy,
            'per_class_accuracy': self.per_class_accuracy,
        }


def confusion(
    gt_labels: Sequence[str],
    predicted_labels: Sequence[str],
    labels: Optional[Sequence[str]] = None,
) -> ConfusionMatrix:
    """
    Count (ground truth, prediction) pairs.

    Args:
        labels: Row/column order; defaults to the sorted union of both lists

    Raises:
        LabelError: On a length mismatch or a label outside labels
    """
    if len(gt_labels) != len(predicted_labels):
        raise LabelError(f"{len(gt_labels)} ground-truth labels but {len(predicted_labels)} predictions")
    if labels is None:
        labels = sorted(set(gt_labels) | set(predicted_labels))
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    for truth, guess in zip(gt_labels, predicted_labels):
        if truth not in index or guess not in index:
            raise LabelError(f"unknown label in pair ({truth!r}, {guess!r})")
        counts[index[truth], index[guess]] += 1
    return ConfusionMatrix(tuple(labels), counts)


# ---------------------------------------------------------------------------
# Report aggregation
# ---------------------------------------------------------------------------

def _as_float(value: Any) -> float:
    """Float from a JSON value; null reads as NaN and "inf" strings as infinity."""
    return math.nan if value is None else float(value)


@dataclass
class EvalRow:
    """MAE of one parameter of one setting under one configuration"""
    phenomenon: str
    setting: str
    family: str
    integrator: str
    loss_kind: str
    horizon: int
    param_kind: str
    param_name: str
    gt: float
    mae: float
    sigma: float
    n_clips: int


@dataclass
class VarianceRow:
    """Spread of one parameter over every trial of a setting"""
    phenomenon: str
    setting: str
    family: str
    integrator: str
    loss_kind: str
    horizon: int
    param_kind: str
    param_name: str
    mean: float
    std: float
    ci95: float
    n_trials: int


@dataclass
class SettingDiagnostics:
    """Per-setting residual, gradient and extrapolation summary"""
    phenomenon: str
    setting: str
    family: str
    integrator: str
    loss_kind: str
    horizon: int
    n_clips: int
    ode_residual: float
    grad_norms: Dict[int, float]
    extrapolation: List[Tuple[int, float, float]]
    diverged: int


@dataclass
class EvalReport:
    """Aggregates computed from results-CSV rows"""
    rows: List[EvalRow] = field(default_factory=list)
    variance: List[VarianceRow] = field(default_factory=list)
    diagnostics: List[SettingDiagnostics] = field(default_factory=list)
    selection: Optional[ConfusionMatrix] = None

    @property
    def residual_by_setting(self) -> Dict[str, float]:
        return {f"{d.phenomenon}/{d.setting}": d.ode_residual for d in self.diagnostics}

    @property
    def grad_norm_snapshots(self) -> Dict[str, Dict[int, float]]:
        return {f"{d.phenomenon}/{d.setting}": dict(d.grad_norms) for d in self.diagnostics}

    @property
    def extrapolation(self) -> Dict[str, List[Tuple[int, float, float]]]:
        return {f"{d.phenomenon}/{d.setting}": list(d.extrapolation) for d in self.diagnostics}

    def to_dict(self) -> Dict[str, Any]:
        diagnostics = []
        for d in self.diagnostics:
            entry = d.__dict__.copy()
            entry['grad_norms'] = {str(k): v for k, v in d.grad_norms.items()}
            entry['extrapolation'] = [list(item) for item in d.extrapolation]
            diagnostics.append(entry)
        return {
            'rows': [r.__dict__.copy() for r in self.rows],
            'variance': [r.__dict__.copy() for r in self.variance],
            'diagnostics': diagnostics,
            'selection': self.selection.to_dict() if self.selection else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'EvalReport':
        diagnostics = []
        for entry in data.get('diagnostics', []):
            entry = dict(entry)
            entry['grad_norms'] = {int(k): _as_float(v) for k, v in entry['grad_norms'].items()}
            entry['extrapolation'] = [
                (int(k), _as_float(mean), _as_float(std)) for k, mean, std in entry['extrapolation']
            ]
            entry['ode_residual'] = _as_float(entry['ode_residual'])
            diagnostics.append(SettingDiagnostics(**entry))
        selection = None
        if data.get('selection'):
            raw = data['selection']
            selection = ConfusionMatrix(tuple(raw['labels']), np.array(raw['counts'], dtype=int))
        return cls(
            rows=[EvalRow(**r) for r in data.get('rows', [])],
            variance=[VarianceRow(**r) for r in data.get('variance', [])],
            diagnostics=diagnostics,
            selection=selection,
        )


def _mean_finite(values: pd.Series) -> float:
    arr = values.to_numpy(dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(np.mean(arr)) if arr.size else math.nan


def _std_finite(values: pd.Series) -> float:
    arr = values.to_numpy(dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(np.std(arr)) if arr.size else math.nan


def _mean_or_inf(values: pd.Series) -> float:
    """Mean over present values; any infinite error makes the mean infinite."""
    arr = values.to_numpy(dtype=float)
    arr = arr[~np.isnan(arr)]
    if not arr.size:
        return math.nan
    if np.isinf(arr).any():
        return math.inf
    return float(np.mean(arr))


def build_report(
    frame: pd.DataFrame,
    split: Optional[str] = 'test',
    selection: Optional[ConfusionMatrix] = None,
) -> EvalReport:
    """
    Aggregate results rows into an EvalReport.

    MAE and sigma use the rows of the given split (all rows when split is
    None); the variance table and the diagnostics use every trial.
    """
    report = EvalReport(selection=selection)
    if frame.empty:
        return report

    keyed = ['phenomenon', 'setting'] + CONFIG_COLUMNS + ['param_kind', 'param_name']
    scored = frame if split is None else frame[frame['split'] == split]
    scored = scored[scored['gt'].notna()]
    for key, group in scored.groupby(keyed, sort=True):
        gt = float(group['gt'].iloc[0])
        error, sigma = mae_with_sigma(group['estimate'].to_numpy(dtype=float), gt)
        report.rows.append(EvalRow(*key[:5], int(key[5]), *key[6:], gt=gt, mae=error, sigma=sigma,
                                   n_clips=len(group)))

    for key, group in frame.groupby(keyed, sort=True):
        estimates = group['estimate'].to_numpy(dtype=float)
        report.variance.append(VarianceRow(
            *key[:5], int(key[5]), *key[6:],
            mean=_mean_finite(group['estimate']),
            std=_std_finite(group['estimate']),
            ci95=trial_ci95(estimates),
            n_trials=len(group),
        ))

    clips = frame.drop_duplicates(CLIP_COLUMNS)
    for key, group in clips.groupby(['phenomenon', 'setting'] + CONFIG_COLUMNS, sort=True):
        grad_norms = {epoch: _mean_finite(group[f'grad_norm_e{epoch}']) for epoch in (1, 50, 200)}
        extrapolation = [
            (k, _mean_or_inf(group[f'extrap_e{k}']), _std_finite(group[f'extrap_e{k}']))
            for k in EXTRAPOLATION_HORIZONS
        ]
        report.diagnostics.append(SettingDiagnostics(
            *key[:5], int(key[5]),
            n_clips=len(group),
            ode_residual=_mean_finite(group['ode_residual']),
            grad_norms=grad_norms,
            extrapolation=extrapolation,
            diverged=int(group['diverged'].astype(bool).sum()),
        ))

    logger.info(
        f"Report: {len(report.rows)} MAE rows, {len(report.variance)} variance rows, "
        f"{len(report.diagnostics)} setting diagnostics"
    )
    return report
