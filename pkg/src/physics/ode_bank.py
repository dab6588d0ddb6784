"""
ODE Bank Module

Right-hand sides, analytic Jacobians and closed-form solutions for every
governing-equation family. All kernels work on batches: states have shape
(B, n) and parameters shape (P,) or (B, P), so a single call evaluates many
windows or trials at once.

Sign convention: damping enters with a positive coefficient,
    z'' = -beta * z' - alpha * z
so a physically damped system has beta > 0.
"""

from typing import Optional, Tuple

import numpy as np

from src.physics.base import (
    FamilyTag,
    OdeFamily,
    ParamVector,
    StateVector,
    UnsupportedFamilyError,
    pair_indices,
)


def _param_columns(params: np.ndarray) -> np.ndarray:
    """Normalize params to shape (B or 1, P)."""
    return np.atleast_2d(np.asarray(params, dtype=float))


def _coupling_matrix(family: OdeFamily, p: np.ndarray) -> np.ndarray:
    """Symmetric (B, N, N) coupling constants with a zero diagonal."""
    n = family.body_count
    batch = p.shape[0]
    kappa = np.zeros((batch, n, n))
    if family.tag is FamilyTag.COUPLED_CONTACT:
        kappa[:] = p[:, 0][:, None, None]
        kappa[:, np.arange(n), np.arange(n)] = 0.0
        return kappa
    offset = 2 * n
    for m, (i, j) in enumerate(pair_indices(n)):
        kappa[:, i, j] = p[:, offset + m]
        kappa[:, j, i] = p[:, offset + m]
    return kappa


def _pair_gate(family: OdeFamily, diff: np.ndarray) -> np.ndarray:
    """1 where a coupling pair is active, 0 otherwise."""
    if family.contact_threshold is None:
        return np.ones_like(diff)
    return (np.abs(diff) < family.contact_threshold).astype(float)


def acceleration(family: OdeFamily, params: np.ndarray, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    Second-order right-hand side z'' = f(z, z'; gamma).

    Args:
        family: Second-order family
        params: Shape (P,) or (B, P)
        z: Positions, shape (B, N)
        v: Velocities, shape (B, N)

    Returns:
        Accelerations, shape (B, N)
    """
    p = _param_columns(params)
    tag = family.tag

    if tag is FamilyTag.SECOND_ORDER_LINEAR:
        return -p[:, 1:2] * v - p[:, 0:1] * z
    if tag is FamilyTag.NONLINEAR_PENDULUM:
        return -p[:, 1:2] * v - p[:, 0:1] * np.sin(z)
    if tag is FamilyTag.CONSTANT_ACCEL:
        return np.broadcast_to(p[:, 0:1], np.broadcast_shapes(z.shape, p[:, 0:1].shape)).copy()
    if tag is FamilyTag.COUPLED_PENDULUM:
        n = family.body_count
        diff = z[:, :, None] - z[:, None, :]
        coupling = np.sum(_coupling_matrix(family, p) * _pair_gate(family, diff) * diff, axis=2)
        return -p[:, n:2 * n] * v - p[:, :n] * np.sin(z) - coupling
    if tag is FamilyTag.COUPLED_CONTACT:
        diff = z[:, :, None] - z[:, None, :]
        coupling = np.sum(_coupling_matrix(family, p) * _pair_gate(family, diff) * diff, axis=2)
        return -p[:, 1:2] * v - coupling

    raise UnsupportedFamilyError(f"{family} has no second-order right-hand side")


def acceleration_jacobians(
    family: OdeFamily, params: np.ndarray, z: np.ndarray, v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Partial derivatives of the acceleration.

    Returns:
        (da/dz, da/dv, da/dp) with shapes (B, N, N), (B, N, N), (B, N, P)
    """
    p = _param_columns(params)
    tag = family.tag
    n = family.body_count
    batch = max(z.shape[0], p.shape[0])
    eye = np.eye(n)
    dz = np.zeros((batch, n, n))
    dv = np.zeros((batch, n, n))
    dp = np.zeros((batch, n, family.arity))

    if tag is FamilyTag.SECOND_ORDER_LINEAR:
        dz[:] = -p[:, 0][:, None, None] * eye
        dv[:] = -p[:, 1][:, None, None] * eye
        dp[:, :, 0] = -z
        dp[:, :, 1] = -v
    elif tag is FamilyTag.NONLINEAR_PENDULUM:
        dz[:] = (-p[:, 0:1] * np.cos(z))[:, :, None] * eye
        dv[:] = -p[:, 1][:, None, None] * eye
        dp[:, :, 0] = -np.sin(z)
        dp[:, :, 1] = -v
    elif tag is FamilyTag.CONSTANT_ACCEL:
        dp[:, :, 0] = 1.0
    elif tag in (FamilyTag.COUPLED_PENDULUM, FamilyTag.COUPLED_CONTACT):
        diff = z[:, :, None] - z[:, None, :]
        gated = _coupling_matrix(family, p) * _pair_gate(family, diff)
        # d/dz_j of -sum_j k_ij (z_i - z_j): +k_ij off-diagonal, -sum_j k_ij on it
        dz[:] = gated
        dz[:, np.arange(n), np.arange(n)] = -np.sum(gated, axis=2)
        if tag is FamilyTag.COUPLED_PENDULUM:
            dz[:, np.arange(n), np.arange(n)] -= p[:, :n] * np.cos(z)
            dv[:] = p[:, n:2 * n][:, :, None] * (-eye)
            for i in range(n):
                dp[:, i, i] = -np.sin(z[:, i])
                dp[:, i, n + i] = -v[:, i]
            gate = _pair_gate(family, diff)
            for m, (i, j) in enumerate(pair_indices(n)):
                term = gate[:, i, j] * diff[:, i, j]
                dp[:, i, 2 * n + m] = -term
                dp[:, j, 2 * n + m] = term
        else:
            dv[:] = -p[:, 1][:, None, None] * eye
            dp[:, :, 0] = -np.sum(_pair_gate(family, diff) * diff, axis=2)
            dp[:, :, 1] = -v
    else:
        raise UnsupportedFamilyError(f"{family} has no second-order right-hand side")

    return dz, dv, dp


def velocity_field(family: OdeFamily, params: np.ndarray, z: np.ndarray) -> np.ndarray:
    """First-order right-hand side z' = f(z; gamma), shape (B, N)."""
    p = _param_columns(params)
    if family.tag is FamilyTag.FIRST_ORDER_DECAY:
        return -p[:, 0:1] * z
    if family.tag is FamilyTag.TORRICELLI:
        # Drained vessel stays empty.
        return -p[:, 0:1] * np.sqrt(np.maximum(z, 0.0))
    raise UnsupportedFamilyError(f"{family} has no first-order right-hand side")


def velocity_field_jacobians(
    family: OdeFamily, params: np.ndarray, z: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """(df/dz, df/dp) with shapes (B, N, N) and (B, N, P)."""
    p = _param_columns(params)
    batch = max(z.shape[0], p.shape[0])
    n = family.body_count
    dz = np.zeros((batch, n, n))
    dp = np.zeros((batch, n, family.arity))

    if family.tag is FamilyTag.FIRST_ORDER_DECAY:
        dz[:] = -p[:, 0][:, None, None] * np.eye(n)
        dp[:, :, 0] = -z
    elif family.tag is FamilyTag.TORRICELLI:
        root = np.sqrt(np.maximum(z, 0.0))
        with np.errstate(divide='ignore', invalid='ignore'):
            slope = np.where(z > 0.0, -p[:, 0:1] / (2.0 * np.where(root > 0, root, 1.0)), 0.0)
        dz[:] = slope[:, :, None] * np.eye(n)
        dp[:, :, 0] = -root
    else:
        raise UnsupportedFamilyError(f"{family} has no first-order right-hand side")

    return dz, dp


def flat_rhs(family: OdeFamily, params: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Time derivative of the flat state y = [z, v] (or [z]), shape (B, n)."""
    if family.is_algebraic:
        raise UnsupportedFamilyError(f"{family} is algebraic and has no right-hand side")
    n = family.body_count
    if family.is_first_order:
        return velocity_field(family, params, y[:, :n])
    z, v = y[:, :n], y[:, n:]
    return np.concatenate([v, acceleration(family, params, z, v)], axis=1)


def flat_jacobians(family: OdeFamily, params: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(d ydot / dy, d ydot / dp) for the flat state, shapes (B, n, n) and (B, n, P)."""
    if family.is_algebraic:
        raise UnsupportedFamilyError(f"{family} is algebraic and has no right-hand side")
    n = family.body_count
    if family.is_first_order:
        return velocity_field_jacobians(family, params, y[:, :n])

    z, v = y[:, :n], y[:, n:]
    az, av, ap = acceleration_jacobians(family, params, z, v)
    batch = az.shape[0]
    dy = np.zeros((batch, 2 * n, 2 * n))
    dy[:, :n, n:] = np.eye(n)
    dy[:, n:, :n] = az
    dy[:, n:, n:] = av
    dp = np.zeros((batch, 2 * n, family.arity))
    dp[:, n:, :] = ap
    return dy, dp


def rhs(family: OdeFamily, params: ParamVector, state: StateVector) -> StateVector:
    """
    Evaluate the right-hand side at one state.

    Returns a StateVector whose positions hold dz/dt and whose velocities
    hold dv/dt (empty for first-order families).
    """
    _check(family, params, state)
    y = state.to_flat()[None, :]
    return StateVector.from_flat(family, flat_rhs(family, params.as_array(), y)[0])


def rhs_jacobians(family: OdeFamily, params: ParamVector, state: StateVector) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (d rhs / d state, d rhs / d params) at one state."""
    _check(family, params, state)
    y = state.to_flat()[None, :]
    dy, dp = flat_jacobians(family, params.as_array(), y)
    return dy[0], dp[0]


def _check(family: OdeFamily, params: ParamVector, state: StateVector) -> None:
    if params.family != family:
        raise UnsupportedFamilyError(f"parameters belong to {params.family}, not {family}")
    state.check(family)


def closed_form_positions(
    family: OdeFamily, params: ParamVector, initial: Optional[StateVector], times: np.ndarray
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Closed-form positions (and velocities where they exist) at many times.

    Returns:
        (positions, velocities), each of shape (len(times), 1); velocities
        is None for first-order and algebraic families.
    """
    t = np.asarray(times, dtype=float)[:, None]
    p = params.values
    tag = family.tag

    if tag is FamilyTag.FALLING_BALL_RADIUS:
        g, r0_f, h0 = p
        height = h0 + 0.5 * g * t ** 2
        return r0_f / height, None

    if initial is None:
        raise UnsupportedFamilyError(f"{family} needs an initial state for its closed form")
    initial.check(family)
    z0 = initial.positions[0]

    if tag is FamilyTag.FIRST_ORDER_DECAY:
        return z0 * np.exp(-p[0] * t), None
    if tag is FamilyTag.CONSTANT_ACCEL:
        v0 = initial.velocities[0]
        return z0 + v0 * t + 0.5 * p[0] * t ** 2, v0 + p[0] * t
    if tag is FamilyTag.SECOND_ORDER_LINEAR and p[1] == 0.0:
        alpha = p[0]
        v0 = initial.velocities[0]
        if alpha > 0:
            omega = np.sqrt(alpha)
            pos = z0 * np.cos(omega * t) + v0 / omega * np.sin(omega * t)
            vel = -z0 * omega * np.sin(omega * t) + v0 * np.cos(omega * t)
            return pos, vel
        if alpha == 0:
            return z0 + v0 * t, np.full_like(t, v0)

    raise UnsupportedFamilyError(f"no closed form for {family} with parameters {params.values}")


def closed_form(family: OdeFamily, params: ParamVector, initial: Optional[StateVector], t: float) -> StateVector:
    """Closed-form state at a single time t."""
    positions, velocities = closed_form_positions(family, params, initial, np.array([t]))
    if velocities is None:
        return StateVector(tuple(positions[0]), ())
    return StateVector(tuple(positions[0]), tuple(velocities[0]))


def time_orders(family: OdeFamily) -> Tuple[int, ...]:
    """
    Power of inverse time carried by each parameter.

    A parameter of order q rescales by (dt_assumed / dt_true) ** q when a
    fit was run under the wrong frame interval.
    """
    tag = family.tag
    if tag is FamilyTag.COUPLED_PENDULUM:
        n = family.body_count
        return (2,) * n + (1,) * n + (2,) * (family.arity - 2 * n)
    return {
        FamilyTag.SECOND_ORDER_LINEAR: (2, 1),
        FamilyTag.FIRST_ORDER_DECAY: (1,),
        FamilyTag.TORRICELLI: (1,),
        FamilyTag.CONSTANT_ACCEL: (2,),
        FamilyTag.NONLINEAR_PENDULUM: (2, 1),
        FamilyTag.COUPLED_CONTACT: (2, 1),
        FamilyTag.FALLING_BALL_RADIUS: (2, 0, 0),
    }[tag]


def oscillator_energy(alpha: float, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Energy 0.5 * v^2 + 0.5 * alpha * z^2 of the linear oscillator."""
    return 0.5 * np.asarray(v) ** 2 + 0.5 * alpha * np.asarray(z) ** 2
