"""
Estimator Module

Fits ODE parameters to observed trajectories by minimizing the one-step or
multi-step prediction loss with Adam, using gradients from forward
sensitivity propagation through the chosen integrator.

Also provides the central-difference least-squares fit used as an oracle and
warm start, period extraction, and the initialization strategies.

Window convention: second-order families start each prediction window at
frame t >= 1 with the backward-difference velocity (z_t - z_{t-1}) / dt, so
the input never contains the frames being predicted. For horizon K the
windows are t = 1 .. T-1-K; first-order families start at t = 0.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.analytics.gt_fit import levenberg_marquardt, period_factor
from src.physics.base import (
    ClipId,
    DomainError,
    FamilyTag,
    IllPosedFitError,
    InsufficientPeaksError,
    IntegratorKind,
    OdeFamily,
    ParamVector,
    StateShapeError,
    Trajectory,
    TrajectoryTooShortError,
    UnsupportedFamilyError,
    pair_indices,
)
from src.physics.integrators import DIVERGENCE_LIMIT, advance, is_diverged, resolve_kind
from src.physics.ode_bank import closed_form_positions
from src.utils import get_contextual_logger, get_logger

logger = get_logger(__name__)

GRAD_SNAPSHOT_EPOCHS = (1, 50, 200)
# Singular-value ratio below which a regression counts as rank deficient.
RANK_RTOL = 1e-6
# Velocity stencils: frames needed before and after the window start.
VELOCITY_STENCILS = {"backward": (1, 0), "central": (1, 1), "central4": (2, 2)}
INIT_STRATEGIES = ("default", "period", "ls")


class LossKind(Enum):
    """Training objectives"""
    ONE_STEP = "one-step"
    MULTI_STEP = "multi-step"


def default_weights(horizon: int) -> Tuple[float, ...]:
    """Horizon weights 1, 1, 0.5, 0.5, 0.25, ... (halving every two steps)."""
    return tuple(0.5 ** ((k - 1) // 2) for k in range(1, horizon + 1))


@dataclass
class FitConfig:
    """
    Configuration of one gradient-based fit.

    Attributes:
        loss: One-step or multi-step objective
        horizon: Rollout length K (1 for the one-step loss)
        weights: Per-step weights w_1..w_K; defaults to default_weights(K)
        integrator: Stepper used inside the loss
        epochs: Number of Adam steps
        lr_params: Adam learning rate
        seed: Recorded for traceability; the fit itself is deterministic
        init_params: Explicit start, overriding init_strategy
        init_strategy: "default", "period" or "ls"; None lets the clip preset choose
        divergence_limit: State magnitude treated as divergence
    """
    loss: LossKind = LossKind.ONE_STEP
    horizon: int = 1
    weights: Optional[Tuple[float, ...]] = None
    integrator: IntegratorKind = IntegratorKind.EULER_CORRECTED
    epochs: int = 500
    lr_params: float = 1e-2
    seed: int = 42
    init_params: Optional[ParamVector] = None
    init_strategy: Optional[str] = None
    divergence_limit: float = DIVERGENCE_LIMIT
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.loss, str):
            self.loss = LossKind(self.loss)
        if isinstance(self.integrator, str):
            self.integrator = IntegratorKind(self.integrator)
        if self.horizon < 1:
            raise DomainError(f"horizon must be >= 1, got {self.horizon}")
        if self.loss is LossKind.ONE_STEP and self.horizon != 1:
            raise DomainError("the one-step loss has horizon 1")
        if self.weights is None:
            self.weights = default_weights(self.horizon)
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != self.horizon:
            raise DomainError(f"{len(self.weights)} weights given for horizon {self.horizon}")
        if any(w < 0 for w in self.weights):
            raise DomainError("weights must be non-negative")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.lr_params <= 0:
            raise DomainError("lr_params must be positive")
        if self.init_strategy is not None and self.init_strategy not in INIT_STRATEGIES:
            raise DomainError(f"unknown init strategy {self.init_strategy!r}")

    @classmethod
    def preset(cls, name: str, **overrides) -> 'FitConfig':
        """
        Named configurations used on the command line.

        baseline: uncorrected Euler, one-step loss from the default start
        corrected: corrected Euler, one-step loss
        multistep: corrected Euler, five-step loss
        """
        presets = {
            'baseline': dict(integrator=IntegratorKind.EULER_UNCORRECTED, loss=LossKind.ONE_STEP, horizon=1,
                             init_strategy="default"),
            'corrected': dict(integrator=IntegratorKind.EULER_CORRECTED, loss=LossKind.ONE_STEP, horizon=1),
            'multistep': dict(integrator=IntegratorKind.EULER_CORRECTED, loss=LossKind.MULTI_STEP, horizon=5),
        }
        if name not in presets:
            raise DomainError(f"unknown configuration {name!r}; choose from {', '.join(presets)}")
        values = dict(presets[name])
        values.update(overrides)
        return cls(**values)


@dataclass
class FitResult:
    """Outcome of fit_clip"""
    final_params: ParamVector
    loss_curve: List[float]
    grad_norm_curve: List[float]
    ode_residual: float
    diverged: bool
    clip_id: Optional[ClipId] = None
    init_params: Optional[ParamVector] = None
    divergence_epoch: Optional[int] = None

    @property
    def epochs_run(self) -> int:
        return len(self.loss_curve)

    def grad_norm_at(self, epoch: int) -> float:
        """Gradient norm at a 1-based epoch, NaN when the fit stopped earlier."""
        if 1 <= epoch <= len(self.grad_norm_curve):
            return self.grad_norm_curve[epoch - 1]
        return math.nan


@dataclass
class PredictionWindows:
    """Start states (W, n) and targets (K, W, N) of all prediction windows"""
    start: np.ndarray
    targets: np.ndarray
    dt: float

    @property
    def count(self) -> int:
        return self.start.shape[0]


@dataclass
class LossEvaluation:
    loss: float
    grad: np.ndarray
    diverged: bool = False
    step_index: Optional[int] = None


def _check_shapes(family: OdeFamily, traj: Trajectory) -> None:
    if traj.body_count != family.body_count:
        raise StateShapeError(
            f"{family} expects {family.body_count} bodies, trajectory has {traj.body_count}"
        )
    if family.is_algebraic:
        raise UnsupportedFamilyError(f"{family} has no right-hand side to step")


def prediction_windows(
    family: OdeFamily, traj: Trajectory, horizon: int = 1, velocity: str = "backward"
) -> PredictionWindows:
    """
    Build the prediction windows of a trajectory.

    Args:
        velocity: "backward" (training), "central" or "central4" (scoring
            only; these stencils look one or two frames ahead)
    """
    _check_shapes(family, traj)
    z = traj.positions
    T = traj.n_samples
    dt = traj.dt

    if family.is_first_order:
        W = T - horizon
        if W < 1:
            raise TrajectoryTooShortError(f"need at least {horizon + 1} samples, got {T}")
        start = z[:W]
        targets = np.stack([z[k:W + k] for k in range(1, horizon + 1)])
        return PredictionWindows(start=start, targets=targets, dt=dt)

    if velocity not in VELOCITY_STENCILS:
        raise DomainError(f"unknown velocity scheme {velocity!r}")
    lookback, lookahead = VELOCITY_STENCILS[velocity]
    first, last = lookback, T - 1 - max(horizon, lookahead)
    if last < first:
        raise TrajectoryTooShortError(
            f"need at least {first + max(horizon, lookahead) + 1} samples, got {T}"
        )
    idx = np.arange(first, last + 1)
    if velocity == "backward":
        v = (z[idx] - z[idx - 1]) / dt
    elif velocity == "central":
        v = (z[idx + 1] - z[idx - 1]) / (2.0 * dt)
    else:
        v = (8.0 * (z[idx + 1] - z[idx - 1]) - (z[idx + 2] - z[idx - 2])) / (12.0 * dt)
    start = np.concatenate([z[idx], v], axis=1)
    targets = np.stack([z[idx + k] for k in range(1, horizon + 1)])
    return PredictionWindows(start=start, targets=targets, dt=dt)


def evaluate_loss(
    family: OdeFamily,
    params: np.ndarray,
    windows: PredictionWindows,
    kind: IntegratorKind,
    weights: Sequence[float],
    need_grad: bool = True,
    limit: float = DIVERGENCE_LIMIT,
) -> LossEvaluation:
    """
    Weighted mean squared k-step prediction error and its exact gradient.

    On divergence the loss is the guard value (limit) and the gradient is zero.
    """
    p = np.asarray(params, dtype=float)
    n_bodies = family.body_count
    y = windows.start
    W = windows.count
    sens = np.zeros((W, y.shape[1], family.arity)) if need_grad else None
    loss = 0.0
    grad = np.zeros(family.arity)

    for k, weight in enumerate(weights):
        y, sens = advance(kind, family, p, y, windows.dt, sens)
        if is_diverged(y, limit) or (sens is not None and not np.all(np.isfinite(sens))):
            return LossEvaluation(loss=limit, grad=np.zeros(family.arity), diverged=True, step_index=k + 1)
        err = y[:, :n_bodies] - windows.targets[k]
        loss += weight * float(np.mean(np.sum(err * err, axis=1)))
        if need_grad:
            grad += weight * 2.0 * np.einsum('wi,wip->p', err, sens[:, :n_bodies, :]) / W

    return LossEvaluation(loss=loss, grad=grad)


def one_step_loss(
    family: OdeFamily,
    params: ParamVector,
    traj: Trajectory,
    integrator: IntegratorKind = IntegratorKind.EULER_CORRECTED,
) -> Tuple[float, np.ndarray]:
    """Mean squared one-step prediction error and its gradient."""
    resolve_kind(family, integrator)
    windows = prediction_windows(family, traj, 1)
    result = evaluate_loss(family, params.as_array(), windows, integrator, (1.0,))
    return result.loss, result.grad


def multi_step_loss(
    family: OdeFamily,
    params: ParamVector,
    traj: Trajectory,
    integrator: IntegratorKind = IntegratorKind.EULER_CORRECTED,
    horizon: int = 5,
    weights: Optional[Sequence[float]] = None,
    limit: float = DIVERGENCE_LIMIT,
) -> Tuple[float, np.ndarray]:
    """
    Weighted K-step rollout loss and its gradient.

    With horizon 1 and weights [1] this equals one_step_loss bit for bit.
    A diverging rollout returns the guard value with a zero gradient.
    """
    weights = tuple(weights) if weights is not None else default_weights(horizon)
    if len(weights) != horizon:
        raise DomainError(f"{len(weights)} weights given for horizon {horizon}")
    resolve_kind(family, integrator)
    windows = prediction_windows(family, traj, horizon)
    result = evaluate_loss(family, params.as_array(), windows, integrator, weights, limit=limit)
    if result.diverged:
        logger.warning(f"{family}: {horizon}-step rollout diverged at step {result.step_index}")
    return result.loss, result.grad


def prediction_error(
    family: OdeFamily,
    params: ParamVector,
    traj: Trajectory,
    integrator: IntegratorKind = IntegratorKind.EULER_CORRECTED,
    velocity: str = "backward",
) -> float:
    """Mean squared one-step prediction error (no gradient)."""
    if family.is_algebraic:
        times = traj.times - traj.t0
        predicted, _ = closed_form_positions(family, params, None, times)
        return float(np.mean(np.sum((predicted[1:] - traj.positions[1:]) ** 2, axis=1)))
    windows = prediction_windows(family, traj, 1, velocity=velocity)
    return evaluate_loss(family, params.as_array(), windows, integrator, (1.0,), need_grad=False).loss


class AdamOptimizer:
    """
    Adam with bias-corrected moment estimates and projection onto the
    feasible set after every step.
    """

    def __init__(
        self,
        learning_rate: float = 1e-2,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        nonnegative: Sequence[int] = (),
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.nonnegative = tuple(nonnegative)
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def update(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        updated = params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
        for index in self.nonnegative:
            updated[index] = max(updated[index], 0.0)
        return updated


def extract_period(traj: Trajectory, body: int = 0) -> float:
    """
    Oscillation period from upward zero crossings of the mean-subtracted signal.

    Crossing times are linearly interpolated between frames.

    Raises:
        InsufficientPeaksError: With fewer than two full cycles
    """
    signal = traj.positions[:, body] - np.mean(traj.positions[:, body])
    below, above = signal[:-1], signal[1:]
    idx = np.nonzero((below < 0) & (above >= 0))[0]
    if len(idx) < 3:
        raise InsufficientPeaksError(f"found {max(len(idx) - 1, 0)} full cycles, need at least 2")
    frac = -below[idx] / (above[idx] - below[idx])
    crossings = traj.t0 + traj.dt * (idx + frac)
    return float((crossings[-1] - crossings[0]) / (len(crossings) - 1))


def default_init(family: OdeFamily) -> ParamVector:
    """0.5 for stiffness-like slots, 0.05 for damping slots."""
    tag = family.tag
    if tag is FamilyTag.COUPLED_PENDULUM:
        n = family.body_count
        values = [0.5] * n + [0.05] * n + [0.5] * len(pair_indices(n))
    elif tag in (FamilyTag.SECOND_ORDER_LINEAR, FamilyTag.NONLINEAR_PENDULUM, FamilyTag.COUPLED_CONTACT):
        values = [0.5, 0.05]
    elif family.is_algebraic:
        raise UnsupportedFamilyError(f"{family} is fitted by least squares, not by gradient descent")
    else:
        values = [0.5]
    return ParamVector(family, tuple(values))


def initial_guess(family: OdeFamily, traj: Optional[Trajectory] = None, strategy: str = "default") -> ParamVector:
    """
    Starting parameters of a fit.

    Strategies:
        default: default_init
        period: stiffness slots of oscillating families from the extracted
            period, amplitude corrected for pendulums
        ls: central-difference least-squares fit, projected onto the
            feasible set
    """
    start = default_init(family)
    if strategy == "default":
        return start
    if traj is None:
        raise DomainError(f"init strategy {strategy!r} needs a trajectory")

    if strategy == "ls":
        try:
            return direct_ls_fit(family, traj)
        except IllPosedFitError as e:
            logger.warning(f"{family}: least-squares start unavailable ({e}); using defaults")
            return start

    if strategy != "period":
        raise DomainError(f"unknown init strategy {strategy!r}")

    values = list(start.values)
    if family.tag in (FamilyTag.NONLINEAR_PENDULUM, FamilyTag.COUPLED_PENDULUM, FamilyTag.SECOND_ORDER_LINEAR):
        for body in range(family.body_count):
            try:
                period = extract_period(traj, body)
            except InsufficientPeaksError:
                logger.debug(f"{family}: no period for body {body}; keeping default start")
                continue
            omega = 2.0 * math.pi / period
            if family.tag is not FamilyTag.SECOND_ORDER_LINEAR:
                amplitude = min(float(np.max(np.abs(traj.positions[:, body]))), 3.0)
                omega *= period_factor(amplitude)
            values[body] = omega ** 2
    return start.replace(values)


def finite_differences(z: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    First and second derivatives by central differences.

    Endpoints use second-order one-sided stencils; callers exclude them from
    regressions.
    """
    if z.shape[0] < 4:
        raise TrajectoryTooShortError(f"need at least 4 samples, got {z.shape[0]}")
    zdot = np.gradient(z, dt, axis=0, edge_order=2)
    zddot = np.empty_like(z)
    zddot[1:-1] = (z[2:] - 2.0 * z[1:-1] + z[:-2]) / dt ** 2
    zddot[0] = (2.0 * z[0] - 5.0 * z[1] + 4.0 * z[2] - z[3]) / dt ** 2
    zddot[-1] = (2.0 * z[-1] - 5.0 * z[-2] + 4.0 * z[-3] - z[-4]) / dt ** 2
    return zdot, zddot


def _design(family: OdeFamily, z: np.ndarray, zdot: np.ndarray) -> np.ndarray:
    """Regression matrix X with rhs = X @ params, stacked body by body."""
    tag = family.tag
    n = family.body_count
    rows = z.shape[0]
    if tag is FamilyTag.SECOND_ORDER_LINEAR:
        return np.column_stack([-z[:, 0], -zdot[:, 0]])
    if tag is FamilyTag.NONLINEAR_PENDULUM:
        return np.column_stack([-np.sin(z[:, 0]), -zdot[:, 0]])
    if tag is FamilyTag.CONSTANT_ACCEL:
        return np.ones((rows, 1))
    if tag is FamilyTag.FIRST_ORDER_DECAY:
        return -z[:, :1]
    if tag is FamilyTag.TORRICELLI:
        return -np.sqrt(np.maximum(z[:, :1], 0.0))

    diff = z[:, :, None] - z[:, None, :]
    blocks = []
    for i in range(n):
        X = np.zeros((rows, family.arity))
        if tag is FamilyTag.COUPLED_PENDULUM:
            X[:, i] = -np.sin(z[:, i])
            X[:, n + i] = -zdot[:, i]
            for m, (a, b) in enumerate(pair_indices(n)):
                if a == i:
                    X[:, 2 * n + m] = -diff[:, a, b]
                elif b == i:
                    X[:, 2 * n + m] = -diff[:, b, a]
        else:
            X[:, 0] = -np.sum(diff[:, i, :], axis=1)
            X[:, 1] = -zdot[:, i]
        blocks.append(X)
    return np.vstack(blocks)


def direct_ls_fit(
    family: OdeFamily, traj: Trajectory, fixed: Optional[Dict[str, float]] = None
) -> ParamVector:
    """
    Least-squares fit of the right-hand side to central-difference derivatives.

    Every family that is linear in its parameters is supported; the apparent
    radius model is fitted by Levenberg-Marquardt and needs fixed["h0"].

    Raises:
        IllPosedFitError: If the regression is rank deficient
        TrajectoryTooShortError: With fewer than 4 samples
    """
    if traj.body_count != family.body_count:
        raise StateShapeError(f"{family} expects {family.body_count} bodies, trajectory has {traj.body_count}")
    if family.is_algebraic:
        return _fit_apparent_radius(family, traj, fixed or {})
    if family.contact_threshold is not None:
        raise UnsupportedFamilyError(f"{family}: gated coupling is not linear in its parameters")

    z = traj.positions
    zdot, zddot = finite_differences(z, traj.dt)
    interior = slice(1, -1)
    X = _design(family, z[interior], zdot[interior])
    target = zdot if family.is_first_order else zddot
    y = target[interior].T.ravel() if family.is_coupled else target[interior, 0]

    singular = np.linalg.svd(X, compute_uv=False)
    if singular.size == 0 or singular[0] == 0 or singular[-1] < RANK_RTOL * singular[0]:
        raise IllPosedFitError(f"{family}: regression on {len(y)} rows is rank deficient")

    solution, *_ = np.linalg.lstsq(X, y, rcond=None)
    for index in family.nonnegative_indices:
        solution[index] = max(solution[index], 0.0)
    return ParamVector(family, tuple(solution))


def _fit_apparent_radius(family: OdeFamily, traj: Trajectory, fixed: Dict[str, float]) -> ParamVector:
    """
    Fit r(t) = r0_f / (h0 + g t^2 / 2) for (g, r0_f) with h0 held fixed.

    1 / r is linear in t^2, which gives the start for Levenberg-Marquardt.
    """
    if 'h0' not in fixed:
        raise IllPosedFitError("apparent radius only identifies g/h0 and r0_f/h0; fix h0")
    h0 = float(fixed['h0'])
    t = traj.times - traj.t0
    r = traj.positions[:, 0]
    if traj.n_samples < 4:
        raise TrajectoryTooShortError(f"need at least 4 samples, got {traj.n_samples}")
    if np.any(r <= 0):
        raise DomainError("apparent radius must stay positive")

    slope, intercept = np.polyfit(t ** 2, 1.0 / r, 1)
    if intercept <= 0:
        raise IllPosedFitError("apparent radius does not shrink like a falling ball")
    r0_f = h0 / intercept
    x0 = np.array([2.0 * slope * r0_f, r0_f])

    def residual(x):
        return x[1] / (h0 + 0.5 * x[0] * t ** 2) - r

    def jacobian(x):
        height = h0 + 0.5 * x[0] * t ** 2
        return np.column_stack([-x[1] * 0.5 * t ** 2 / height ** 2, 1.0 / height])

    result = levenberg_marquardt(residual, jacobian, x0)
    return ParamVector(family, (float(result.x[0]), float(result.x[1]), h0))


def fit_clip(
    family: OdeFamily,
    traj: Trajectory,
    config: Optional[FitConfig] = None,
    clip_id: Optional[ClipId] = None,
) -> FitResult:
    """
    Fit family parameters to one trajectory with Adam.

    The run is deterministic for a given (family, trajectory, config). A
    diverging rollout stops the fit at that epoch with diverged set.
    """
    config = config or FitConfig()
    kind = resolve_kind(family, config.integrator)
    log = get_contextual_logger(__name__, clip=str(clip_id) if clip_id else "", family=str(family))

    windows = prediction_windows(family, traj, config.horizon)
    if config.init_params is not None:
        if config.init_params.family != family:
            raise UnsupportedFamilyError(f"init parameters belong to {config.init_params.family}")
        start = config.init_params
    else:
        start = initial_guess(family, traj, config.init_strategy or "default")

    optimizer = AdamOptimizer(
        learning_rate=config.lr_params,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.eps,
        nonnegative=family.nonnegative_indices,
    )
    params = start.as_array()
    losses: List[float] = []
    grad_norms: List[float] = []
    diverged = False
    divergence_epoch = None

    for epoch in range(1, config.epochs + 1):
        result = evaluate_loss(family, params, windows, kind, config.weights, limit=config.divergence_limit)
        losses.append(result.loss)
        grad_norms.append(float(np.linalg.norm(result.grad)))
        if result.diverged:
            diverged = True
            divergence_epoch = epoch
            log.warning(f"Rollout diverged at epoch {epoch}, step {result.step_index}; stopping fit")
            break
        params = optimizer.update(params, result.grad)
        if epoch in GRAD_SNAPSHOT_EPOCHS:
            log.debug(f"epoch {epoch}: loss={result.loss:.6g} |grad|={grad_norms[-1]:.3g}")

    final = start.replace(params)
    residual = prediction_error(family, final, traj, kind)
    log.info(
        f"Fit finished after {len(losses)} epochs: "
        f"params={dict((k, round(v, 6)) for k, v in final.as_dict().items())} residual={residual:.3g}"
    )
    return FitResult(
        final_params=final,
        loss_curve=losses,
        grad_norm_curve=grad_norms,
        ode_residual=residual,
        diverged=diverged,
        clip_id=clip_id,
        init_params=start,
        divergence_epoch=divergence_epoch,
    )
