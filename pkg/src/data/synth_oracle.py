"""
Synthetic Oracle Module

Produces ground-truth trajectories for the presets: each trial perturbs the
physical constants by a small relative jitter, integrates the true ODE with
RK4 at one hundredth of the frame interval, subsamples to the frame grid and
adds optional Gaussian observation noise.

Trials of one setting are integrated together as a batch; every trial draws
from its own random stream derived from (seed, setting, trial), so results do
not depend on batching or on the order settings are processed in.
"""

from typing import List, Optional

import numpy as np

from src.data.dataio import assign_splits, quantize, stable_key
from src.data.presets import ClipSet, ClipSpec, get_preset, list_presets
from src.physics.base import DivergenceError, IntegratorKind, ParamVector, Trajectory
from src.physics.integrators import integrate
from src.physics.ode_bank import closed_form_positions
from src.utils import get_logger

logger = get_logger(__name__)

SUBSTEPS = 100


def preset(name: str) -> ClipSpec:
    """Look up a registered preset by name."""
    return get_preset(name)


def presets(dataset: Optional[str] = None) -> List[ClipSpec]:
    return [get_preset(name) for name in list_presets(dataset)]


def trial_rng(spec: ClipSpec, seed: int, trial: int) -> np.random.Generator:
    """Independent random stream of one trial."""
    return np.random.default_rng(np.random.SeedSequence([seed, stable_key(spec.phenomenon, spec.setting), trial]))


def jittered_params(spec: ClipSpec, rng: np.random.Generator) -> ParamVector:
    values = spec.true_params.as_array()
    if spec.jitter > 0:
        values = values * rng.normal(1.0, spec.jitter, size=values.shape)
    for index in spec.family.nonnegative_indices:
        values[index] = max(values[index], 0.0)
    return spec.true_params.replace(values)


def simulate_positions(spec: ClipSpec, params: List[ParamVector], n_samples: int) -> np.ndarray:
    """
    Noise-free positions of every trial on the frame grid.

    Returns:
        Array of shape (trials, n_samples, bodies)
    """
    family = spec.family
    times = spec.dt * np.arange(n_samples)
    if family.is_algebraic:
        return np.stack([closed_form_positions(family, p, spec.initial, times)[0] for p in params])

    batch = np.stack([p.as_array() for p in params])
    y0 = np.repeat(spec.initial.to_flat()[None, :], len(params), axis=0)
    try:
        states = integrate(
            IntegratorKind.RK4, family, batch, y0, spec.dt / SUBSTEPS,
            steps=(n_samples - 1) * SUBSTEPS, stride=SUBSTEPS,
        )
    except DivergenceError as e:
        raise DivergenceError(
            f"{spec.key}: ground-truth simulation diverged at frame {e.step_index // SUBSTEPS}"
            f" (trial {e.trial_index})",
            step_index=e.step_index // SUBSTEPS,
            trial_index=e.trial_index,
        ) from e
    # (frames, trials, n) -> (trials, frames, bodies)
    return np.transpose(states[:, :, :family.body_count], (1, 0, 2))


def generate(spec: ClipSpec, seed: int, desk_scale: bool = False, max_samples: int = 600) -> ClipSet:
    """
    Synthesize all trials of a setting.

    Args:
        spec: Clip specification
        seed: Base seed; the same seed always yields bit-identical output
        desk_scale: Cap clips at max_samples frames
        max_samples: Frame cap used by desk_scale

    Returns:
        ClipSet whose trajectories are already rounded to the precision of
        the CSV format, so writing and reloading them is lossless
    """
    if desk_scale:
        spec = spec.capped(max_samples)
    n_samples = spec.n_samples
    rngs = [trial_rng(spec, seed, trial) for trial in range(spec.trial_count)]
    params = [jittered_params(spec, rng) for rng in rngs]

    clean = simulate_positions(spec, params, n_samples)
    dt = float(quantize(spec.dt))

    trajectories = []
    for trial, rng in enumerate(rngs):
        positions = clean[trial]
        if spec.noise_std > 0:
            positions = positions + rng.normal(0.0, spec.noise_std, size=positions.shape)
        trajectories.append(Trajectory(quantize(positions), dt=dt, units=spec.units))

    splits = assign_splits(spec.phenomenon, spec.setting, spec.trial_count, seed, spec.split_ratio)
    logger.info(
        f"Generated {spec.trial_count} trials of {spec.key}: "
        f"{n_samples} frames, dt={spec.dt:.6g}s, family={spec.family}"
    )
    return ClipSet(spec=spec, seed=seed, trajectories=trajectories, splits=splits, trial_params=params)
