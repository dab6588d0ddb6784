"""
Ground-Truth Fitting Module

Classical estimators that produce reference values for the "fitted" ground
truth entries: damping from the amplitude envelope, friction from incline
acceleration, acceleration from a quadratic fit, and the amplitude-corrected
pendulum period. measure_ground_truth runs the applicable procedures over
the trials of a synthesized clip set.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from src.data.presets import ClipSet, ClipSpec
from src.physics.base import (
    DomainError,
    FamilyTag,
    GroundTruthParam,
    InsufficientPeaksError,
    PhysIdError,
    Trajectory,
    TrajectoryTooShortError,
)
from src.utils import get_logger

logger = get_logger(__name__)

G = 9.81

# Fractional period increase over the small-angle period reported for the
# desk pendulum at 20, 45 and 90 degrees. Kept for comparison only.
PUBLISHED_PERIOD_CORRECTIONS = {20.0: 0.0038, 45.0: 0.0168, 90.0: 0.0517}


@dataclass
class LMResult:
    """Outcome of a Levenberg-Marquardt minimization"""
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    jacobian: np.ndarray


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    damping: float = 1e-3,
    factor: float = 10.0,
    max_iter: int = 200,
    gtol: float = 1e-10,
) -> LMResult:
    """
    Minimize 0.5 * ||residual(x)||^2 with Marquardt-scaled damping.

    The damping grows by factor after a rejected step and shrinks by factor
    after an accepted one.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    cost = 0.5 * float(r @ r)
    J = jacobian(x)
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) < gtol:
            converged = True
            break
        A = J.T @ J
        scale = np.diag(np.maximum(np.diag(A), 1e-12))
        try:
            delta = np.linalg.solve(A + damping * scale, -g)
        except np.linalg.LinAlgError:
            damping *= factor
            continue

        x_new = x + delta
        r_new = residual(x_new)
        cost_new = 0.5 * float(r_new @ r_new)
        if np.isfinite(cost_new) and cost_new < cost:
            improvement = cost - cost_new
            x, r, cost = x_new, r_new, cost_new
            J = jacobian(x)
            damping /= factor
            if improvement <= 1e-15 * cost:
                converged = True
                break
        else:
            damping *= factor
            if damping > 1e16:
                converged = True
                break

    return LMResult(x=x, cost=cost, iterations=iteration, converged=converged, jacobian=J)


@dataclass
class EnvelopeFit:
    """
    Exponential amplitude envelope A(t) = A0 * exp(-zeta * t / 2).

    Attributes:
        a0: Initial amplitude
        zeta: Damping coefficient in the +zeta * z' convention
        ci95: Half-width of the 95% interval on zeta from this one fit
        peaks_used: Number of amplitude peaks in the fit
        decaying: False when the fitted envelope grows
    """
    a0: float
    zeta: float
    ci95: float
    peaks_used: int
    decaying: bool = True


def _refine_peak(signal: np.ndarray, index: int, dt: float):
    """Vertex of the parabola through a sampled peak and its neighbours."""
    if index <= 0 or index >= len(signal) - 1:
        return index * dt, signal[index]
    left, mid, right = signal[index - 1], signal[index], signal[index + 1]
    denom = left - 2 * mid + right
    if denom == 0:
        return index * dt, mid
    shift = 0.5 * (left - right) / denom
    return (index + shift) * dt, mid - 0.25 * (left - right) * shift


def fit_envelope_peaks(times: Sequence[float], amplitudes: Sequence[float]) -> EnvelopeFit:
    """
    Fit A0 * exp(-zeta t / 2) to peak amplitudes.

    A straight-line fit of ln A gives the starting point; Levenberg-Marquardt
    then refines it in amplitude space.
    """
    t = np.asarray(times, dtype=float)
    amps = np.asarray(amplitudes, dtype=float)
    if len(t) < 3:
        raise InsufficientPeaksError(f"need at least 3 peaks, got {len(t)}")
    if np.any(amps <= 0):
        raise DomainError("peak amplitudes must be positive")

    slope, intercept = np.polyfit(t, np.log(amps), 1)
    x0 = np.array([math.exp(intercept), -2.0 * slope])

    def residual(x):
        return x[0] * np.exp(-0.5 * x[1] * t) - amps

    def jacobian(x):
        decay = np.exp(-0.5 * x[1] * t)
        return np.column_stack([decay, -0.5 * t * x[0] * decay])

    result = levenberg_marquardt(residual, jacobian, x0)
    a0, zeta = float(result.x[0]), float(result.x[1])

    dof = max(len(t) - 2, 1)
    sigma2 = 2.0 * result.cost / dof
    try:
        cov = sigma2 * np.linalg.inv(result.jacobian.T @ result.jacobian)
        ci95 = 1.96 * math.sqrt(max(cov[1, 1], 0.0))
    except np.linalg.LinAlgError:
        ci95 = math.nan

    decaying = zeta >= 0
    if not decaying:
        logger.warning(f"Envelope grows (zeta={zeta:.4g}); signal is not decaying")
    return EnvelopeFit(a0=a0, zeta=zeta, ci95=ci95, peaks_used=len(t), decaying=decaying)


def fit_envelope(traj: Trajectory, body: int = 0) -> EnvelopeFit:
    """
    Damping coefficient of an oscillating trajectory from its envelope.

    Peaks of |z - mean(z)| are located with a minimum separation of 0.4
    periods and refined by parabolic interpolation.
    """
    # Import here to avoid circular dependency
    from src.analytics.estimator import extract_period

    single = traj.body(body)
    period = extract_period(single)
    signal = np.abs(single.positions[:, 0] - np.mean(single.positions[:, 0]))
    distance = max(1, int(0.4 * period / traj.dt))
    indices, _ = find_peaks(signal, distance=distance)
    if len(indices) < 3:
        raise InsufficientPeaksError(f"found {len(indices)} peaks, need at least 3")

    refined = [_refine_peak(signal, int(i), traj.dt) for i in indices]
    times = np.array([traj.t0 + t for t, _ in refined])
    amps = np.array([a for _, a in refined])
    fit = fit_envelope_peaks(times, amps)
    logger.debug(f"Envelope fit: zeta={fit.zeta:.5g} from {fit.peaks_used} peaks (period {period:.4g}s)")
    return fit


def friction_from_accel(alpha_deg: float, a: float, g: float = G) -> float:
    """
    Kinetic friction coefficient mu = tan(alpha) - a / (g cos(alpha)).

    Raises:
        DomainError: If alpha is outside (0, 90) degrees or g <= 0
    """
    if not 0.0 < alpha_deg < 90.0:
        raise DomainError(f"incline angle must lie in (0, 90) degrees, got {alpha_deg}")
    if g <= 0:
        raise DomainError(f"g must be positive, got {g}")
    alpha = math.radians(alpha_deg)
    return math.tan(alpha) - a / (g * math.cos(alpha))


def accel_from_friction(alpha_deg: float, mu: float, g: float = G) -> float:
    """Inverse of friction_from_accel."""
    if not 0.0 < alpha_deg < 90.0:
        raise DomainError(f"incline angle must lie in (0, 90) degrees, got {alpha_deg}")
    alpha = math.radians(alpha_deg)
    return g * (math.sin(alpha) - mu * math.cos(alpha))


def poly_accel_fit(traj: Trajectory, body: int = 0) -> float:
    """Acceleration a = 2 c2 from a least-squares quadratic x(t) = c0 + c1 t + c2 t^2."""
    if traj.n_samples < 5:
        raise TrajectoryTooShortError(f"quadratic fit needs >= 5 samples, got {traj.n_samples}")
    coeffs = np.polyfit(traj.times, traj.positions[:, body], 2)
    return 2.0 * float(coeffs[0])


def complete_elliptic_k(k: float, tol: float = 1e-12) -> float:
    """Complete elliptic integral of the first kind K(k) by the arithmetic-geometric mean."""
    if not 0.0 <= k < 1.0:
        raise DomainError(f"modulus must lie in [0, 1), got {k}")
    a, b = 1.0, math.sqrt(1.0 - k * k)
    while abs(a - b) > tol * a:
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (2.0 * a)


def period_factor(theta0: float) -> float:
    """Ratio of the exact to the small-angle period at amplitude theta0 (radians)."""
    if not 0.0 <= abs(theta0) < math.pi:
        raise DomainError(f"amplitude must lie in [0, pi), got {theta0}")
    return 2.0 / math.pi * complete_elliptic_k(math.sin(abs(theta0) / 2.0))


def exact_period(length: float, g: float, theta0: float) -> float:
    """Exact period 4 sqrt(L/g) K(sin(theta0/2)) of an undamped pendulum."""
    if length <= 0 or g <= 0:
        raise DomainError("length and g must be positive")
    return 2.0 * math.pi * math.sqrt(length / g) * period_factor(theta0)


@dataclass
class LengthEstimate:
    """Pendulum length recovered from a measured period"""
    small_angle: float
    corrected: float


def corrected_length(period: float, theta0: float, g: float = G) -> LengthEstimate:
    """Length from a period, with and without the amplitude correction."""
    if period <= 0:
        raise DomainError(f"period must be positive, got {period}")
    small = g * (period / (2.0 * math.pi)) ** 2
    return LengthEstimate(small_angle=small, corrected=small / period_factor(theta0) ** 2)


def amplitude_correction_table(
    thetas_deg: Sequence[float] = (20.0, 45.0, 90.0),
    length: float = 0.50,
    g: float = G,
) -> List[Dict[str, float]]:
    """
    Period correction per release angle against the reported values.

    Differences above half a percentage point are logged as warnings.
    """
    rows = []
    for theta_deg in thetas_deg:
        theta = math.radians(theta_deg)
        period = exact_period(length, g, theta)
        correction = period_factor(theta) - 1.0
        lengths = corrected_length(period, theta, g)
        published = PUBLISHED_PERIOD_CORRECTIONS.get(float(theta_deg), math.nan)
        rows.append({
            'theta0_deg': float(theta_deg),
            'period': period,
            'correction': correction,
            'published_correction': published,
            'L_small_angle': lengths.small_angle,
            'L_corrected': lengths.corrected,
        })
        if not math.isnan(published) and abs(correction - published) > 0.005:
            logger.warning(
                f"Amplitude correction at {theta_deg:g} deg is {correction:.2%}, "
                f"reported value is {published:.2%}"
            )
    return rows


def _envelope_damping(spec: ClipSpec, traj: Trajectory) -> float:
    return fit_envelope(traj).zeta


def _incline_friction(spec: ClipSpec, traj: Trajectory) -> float:
    return friction_from_accel(spec.metadata['alpha_deg'], poly_accel_fit(traj))


# (family, entry name) -> (method label, per-trial estimator)
FITTED_PROCEDURES: Dict[Tuple[FamilyTag, str], Tuple[str, Callable[[ClipSpec, Trajectory], float]]] = {
    (FamilyTag.NONLINEAR_PENDULUM, 'zeta'): ('envelope', _envelope_damping),
    (FamilyTag.SECOND_ORDER_LINEAR, 'beta'): ('envelope', _envelope_damping),
    (FamilyTag.CONSTANT_ACCEL, 'mu'): ('incline_poly_accel', _incline_friction),
}


def measure_ground_truth(clipset: ClipSet) -> Tuple[GroundTruthParam, ...]:
    """
    Ground truth of a clip set with its fitted entries measured from the trials.

    Each fitted entry that has a procedure is replaced by the mean over
    trials, with the trial standard deviation as std (the preset std when
    only one trial succeeds). Trials the procedure cannot handle are
    skipped; an entry with no usable trial keeps its preset value.
    """
    spec = clipset.spec
    measured = []
    for param in spec.ground_truth:
        procedure = FITTED_PROCEDURES.get((spec.family.tag, param.name))
        if param.measurement_type != "fitted" or procedure is None:
            measured.append(param)
            continue

        method, estimate = procedure
        values = []
        for trial, traj in enumerate(clipset.trajectories):
            try:
                value = estimate(spec, traj)
            except (PhysIdError, KeyError) as e:
                logger.debug(f"{spec.key} trial {trial}: no {param.name} from {method} ({e})")
                continue
            if math.isfinite(value):
                values.append(value)
        if not values:
            logger.warning(f"{spec.key}: {method} failed on every trial; keeping preset {param.name}")
            measured.append(param)
            continue

        std = float(np.std(values, ddof=1)) if len(values) > 1 else param.std
        measured.append(replace(
            param,
            value=float(np.mean(values)),
            std=std,
            extra={**param.extra, 'method': method, 'trials': len(values)},
        ))
        logger.info(f"{spec.key}: {param.name}={np.mean(values):.5g} +/- {std:.2g} by {method} "
                    f"over {len(values)} trials (preset {param.value:g})")
    return tuple(measured)
