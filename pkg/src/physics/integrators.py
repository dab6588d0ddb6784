"""
Integrators Module

Discrete-time steppers (uncorrected Euler, corrected Euler, Stormer-Verlet,
RK4) with optional forward-sensitivity propagation, so the estimator can get
exact gradients of multi-step rollouts without finite differences.

Sensitivities S = dy/dp follow the chain rule through each step:
    S' = (d step / d y) S + (d step / d p)
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.physics.base import (
    DivergenceError,
    DomainError,
    IntegratorKind,
    IntegratorMismatchError,
    OdeFamily,
    ParamVector,
    StateVector,
)
from src.physics.ode_bank import (
    acceleration,
    acceleration_jacobians,
    flat_jacobians,
    flat_rhs,
    velocity_field,
    velocity_field_jacobians,
)
from src.utils import get_logger

logger = get_logger(__name__)

DIVERGENCE_LIMIT = 1e12


@dataclass
class Rollout:
    """States z_0..z_n produced by repeated stepping"""
    family: OdeFamily
    states: List[StateVector]
    dt: float
    t0: float = 0.0

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.positions for s in self.states])

    @property
    def velocities(self) -> np.ndarray:
        return np.array([s.velocities for s in self.states])

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))


def _mul(jac: np.ndarray, sens: np.ndarray) -> np.ndarray:
    return np.einsum('bij,bjp->bip', jac, sens)


def resolve_kind(family: OdeFamily, kind: IntegratorKind) -> IntegratorKind:
    """
    Effective stepper for a family.

    First-order families have no velocity to correct, so both Euler variants
    and Stormer-Verlet reduce to forward Euler; the uncorrected variant is
    rejected because its defect only exists for second-order state.
    """
    if family.is_algebraic:
        raise IntegratorMismatchError(f"{family} is algebraic and cannot be stepped")
    if family.is_first_order:
        if kind is IntegratorKind.EULER_UNCORRECTED:
            raise IntegratorMismatchError(
                f"{kind.value} is only defined for second-order families, not {family}"
            )
        if kind is IntegratorKind.STORMER_VERLET:
            return IntegratorKind.EULER_CORRECTED
    return kind


def advance(
    kind: IntegratorKind,
    family: OdeFamily,
    params: np.ndarray,
    y: np.ndarray,
    dt: float,
    sens: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    One batched step of the flat state.

    Args:
        kind: Stepper
        family: ODE family
        params: Shape (P,) or (B, P)
        y: Flat states, shape (B, n)
        dt: Step size
        sens: Optional sensitivities dy/dp, shape (B, n, P)

    Returns:
        (y_next, sens_next); sens_next is None when sens is None
    """
    kind = resolve_kind(family, kind)
    if kind is IntegratorKind.RK4:
        return _rk4(family, params, y, dt, sens)
    if family.is_first_order:
        return _forward_euler(family, params, y, dt, sens)

    n = family.body_count
    z, v = y[:, :n], y[:, n:]
    a = acceleration(family, params, z, v)

    if kind is IntegratorKind.STORMER_VERLET:
        return _verlet(family, params, z, v, a, dt, sens)

    v_next = v + dt * a
    if kind is IntegratorKind.EULER_UNCORRECTED:
        # Position update ignores the acceleration entirely.
        z_next = z + dt * v
    else:
        z_next = z + dt * v + dt * dt * a
    y_next = np.concatenate([z_next, v_next], axis=1)
    if sens is None:
        return y_next, None

    sz, sv = sens[:, :n, :], sens[:, n:, :]
    az, av, ap = acceleration_jacobians(family, params, z, v)
    da = _mul(az, sz) + _mul(av, sv) + ap
    sv_next = sv + dt * da
    if kind is IntegratorKind.EULER_UNCORRECTED:
        sz_next = sz + dt * sv
    else:
        sz_next = sz + dt * sv + dt * dt * da
    return y_next, np.concatenate([sz_next, sv_next], axis=1)


def _forward_euler(family, params, y, dt, sens):
    f = velocity_field(family, params, y)
    y_next = y + dt * f
    if sens is None:
        return y_next, None
    fz, fp = velocity_field_jacobians(family, params, y)
    return y_next, sens + dt * (_mul(fz, sens) + fp)


def _verlet(family, params, z, v, a0, dt, sens):
    half = 0.5 * dt
    v_half = v + half * a0
    z_next = z + dt * v_half
    a1 = acceleration(family, params, z_next, v_half)
    v_next = v_half + half * a1
    y_next = np.concatenate([z_next, v_next], axis=1)
    if sens is None:
        return y_next, None

    n = family.body_count
    sz, sv = sens[:, :n, :], sens[:, n:, :]
    az0, av0, ap0 = acceleration_jacobians(family, params, z, v)
    sv_half = sv + half * (_mul(az0, sz) + _mul(av0, sv) + ap0)
    sz_next = sz + dt * sv_half
    az1, av1, ap1 = acceleration_jacobians(family, params, z_next, v_half)
    sv_next = sv_half + half * (_mul(az1, sz_next) + _mul(av1, sv_half) + ap1)
    return y_next, np.concatenate([sz_next, sv_next], axis=1)


def _rk4(family, params, y, dt, sens):
    k1 = flat_rhs(family, params, y)
    y2 = y + 0.5 * dt * k1
    k2 = flat_rhs(family, params, y2)
    y3 = y + 0.5 * dt * k2
    k3 = flat_rhs(family, params, y3)
    y4 = y + dt * k3
    k4 = flat_rhs(family, params, y4)
    y_next = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if sens is None:
        return y_next, None

    j1, p1 = flat_jacobians(family, params, y)
    s1 = _mul(j1, sens) + p1
    j2, p2 = flat_jacobians(family, params, y2)
    s2 = _mul(j2, sens + 0.5 * dt * s1) + p2
    j3, p3 = flat_jacobians(family, params, y3)
    s3 = _mul(j3, sens + 0.5 * dt * s2) + p3
    j4, p4 = flat_jacobians(family, params, y4)
    s4 = _mul(j4, sens + dt * s3) + p4
    return y_next, sens + dt / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4)


def is_diverged(y: np.ndarray, limit: float = DIVERGENCE_LIMIT) -> bool:
    """True when any state is non-finite or exceeds the magnitude limit."""
    if not np.all(np.isfinite(y)):
        return True
    return bool(np.max(np.abs(y), initial=0.0) > limit)


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")


def step(
    kind: IntegratorKind,
    family: OdeFamily,
    params: ParamVector,
    state: StateVector,
    dt: float,
) -> StateVector:
    """Advance one state by one step of size dt."""
    _check_dt(dt)
    state.check(family)
    y_next, _ = advance(kind, family, params.as_array(), state.to_flat()[None, :], dt)
    return StateVector.from_flat(family, y_next[0])


def integrate(
    kind: IntegratorKind,
    family: OdeFamily,
    params: np.ndarray,
    y0: np.ndarray,
    dt: float,
    steps: int,
    stride: int = 1,
    limit: float = DIVERGENCE_LIMIT,
) -> np.ndarray:
    """
    Batched rollout keeping every stride-th state.

    Args:
        params: Shape (P,) or (B, P)
        y0: Initial flat states, shape (B, n)
        steps: Number of steps to take
        stride: Keep one state every stride steps

    Returns:
        Array of shape (steps // stride + 1, B, n)

    Raises:
        DivergenceError: With the 1-based index of the first bad step;
            trial_index names the first offending batch row
    """
    _check_dt(dt)
    y = np.array(y0, dtype=float)
    kept = [y.copy()]
    for index in range(1, steps + 1):
        y, _ = advance(kind, family, params, y, dt)
        if is_diverged(y, limit):
            bad = ~np.all(np.isfinite(y) & (np.abs(y) <= limit), axis=1)
            raise DivergenceError(
                f"{family} rollout diverged at step {index}",
                step_index=index,
                trial_index=int(np.argmax(bad)),
            )
        if index % stride == 0:
            kept.append(y.copy())
    return np.stack(kept)


def rollout(
    kind: IntegratorKind,
    family: OdeFamily,
    params: ParamVector,
    initial: StateVector,
    dt: float,
    steps: int,
    t0: float = 0.0,
    limit: float = DIVERGENCE_LIMIT,
) -> Rollout:
    """
    Repeatedly step from an initial state.

    Returns:
        Rollout with steps + 1 states, the first equal to initial
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    _check_dt(dt)
    initial.check(family)
    resolve_kind(family, kind)
    ys = integrate(kind, family, params.as_array(), initial.to_flat()[None, :], dt, steps, limit=limit)
    states = [StateVector.from_flat(family, y[0]) for y in ys]
    states[0] = initial
    return Rollout(family=family, states=states, dt=dt, t0=t0)
