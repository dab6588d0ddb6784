"""
Robustness Module

Reruns fits over a grid of design choices (integrator, rollout horizon,
data seed) and summarizes how much each parameter estimate moves. The
horizon ablation and integrator comparison are one-axis slices of the same
grid.
"""

from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.analytics.estimator import FitConfig, LossKind
from src.analytics.metrics import mae_with_sigma
from src.analytics.runner import ClipOutcome, Rules, run_clipset
from src.data.dataio import results_to_frame
from src.data.presets import ClipSet, ClipSpec
from src.data.synth_oracle import generate
from src.physics.base import IntegratorKind
from src.utils import get_logger

logger = get_logger(__name__)

SUMMARY_COLUMNS = [
    'phenomenon', 'setting', 'param_kind', 'param_name', 'axis', 'value',
    'gt', 'mean', 'mae', 'sigma', 'ode_residual', 'diverged', 'n_clips',
]
SPREAD_COLUMNS = ['phenomenon', 'setting', 'param_kind', 'param_name', 'n_configs', 'spread', 'relative_spread']


def horizon_config(base: FitConfig, horizon: int) -> FitConfig:
    """Base config with the given rollout horizon and default weights."""
    loss = LossKind.ONE_STEP if horizon == 1 else LossKind.MULTI_STEP
    return replace(base, loss=loss, horizon=horizon, weights=None)


def _frame(outcomes: Sequence[ClipOutcome]) -> pd.DataFrame:
    rows = [row for outcome in outcomes for row in outcome.rows]
    for outcome in outcomes:
        if outcome.failed:
            logger.warning(f"Sweep fit failed: {outcome.error}")
    return results_to_frame(rows)


def _summarize(frame: pd.DataFrame, axis: str, column: str) -> pd.DataFrame:
    """MAE, sigma, residual and divergences per parameter and axis value."""
    if frame.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    records = []
    keys = ['phenomenon', 'setting', 'param_kind', 'param_name', column]
    for key, group in frame.groupby(keys, sort=True):
        gt = group['gt'].dropna()
        estimates = group['estimate'].to_numpy(dtype=float)
        if gt.empty:
            error, sigma = np.nan, float(np.std(estimates))
        else:
            error, sigma = mae_with_sigma(estimates, float(gt.iloc[0]))
        records.append({
            'phenomenon': key[0],
            'setting': key[1],
            'param_kind': key[2],
            'param_name': key[3],
            'axis': axis,
            'value': key[4],
            'gt': float(gt.iloc[0]) if not gt.empty else np.nan,
            'mean': float(np.mean(estimates)),
            'mae': error,
            'sigma': sigma,
            'ode_residual': float(group['ode_residual'].mean()),
            'diverged': int(group['diverged'].astype(bool).sum()),
            'n_clips': len(group),
        })
    return pd.DataFrame(records, columns=SUMMARY_COLUMNS)


def horizon_ablation(
    clipset: ClipSet,
    horizons: Sequence[int] = (1, 2, 3, 5),
    base: Optional[FitConfig] = None,
    rules: Optional[Rules] = None,
    trials: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """Fit every trial once per horizon K and summarize per K."""
    base = base or FitConfig()
    outcomes: List[ClipOutcome] = []
    for horizon in horizons:
        logger.info(f"{clipset.spec.key}: horizon K={horizon}")
        outcomes.extend(run_clipset(clipset, horizon_config(base, horizon), rules, trials))
    return _summarize(_frame(outcomes), 'horizon', 'horizon')


def integrator_comparison(
    clipset: ClipSet,
    integrators: Sequence[IntegratorKind] = (
        IntegratorKind.EULER_CORRECTED, IntegratorKind.STORMER_VERLET, IntegratorKind.RK4,
    ),
    base: Optional[FitConfig] = None,
    rules: Optional[Rules] = None,
    trials: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """Fit every trial once per integrator and summarize per integrator."""
    base = base or FitConfig()
    outcomes: List[ClipOutcome] = []
    for kind in integrators:
        logger.info(f"{clipset.spec.key}: integrator {kind.value}")
        outcomes.extend(run_clipset(clipset, replace(base, integrator=IntegratorKind(kind)), rules, trials))
    return _summarize(_frame(outcomes), 'integrator', 'integrator')


def robustness_sweep(
    spec: ClipSpec,
    seeds: Sequence[int],
    integrators: Sequence[IntegratorKind],
    horizons: Sequence[int],
    base: Optional[FitConfig] = None,
    rules: Optional[Rules] = None,
    desk_scale: bool = True,
    max_samples: int = 600,
    trials: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """
    Results rows of the full (seed x integrator x horizon) grid.

    Each seed regenerates the clip set; fits within a seed share data.
    """
    base = base or FitConfig()
    outcomes: List[ClipOutcome] = []
    for seed in seeds:
        clipset = generate(spec, seed, desk_scale=desk_scale, max_samples=max_samples)
        for kind in integrators:
            for horizon in horizons:
                config = replace(horizon_config(base, horizon), integrator=IntegratorKind(kind))
                outcomes.extend(run_clipset(clipset, config, rules, trials))
    frame = _frame(outcomes)
    logger.info(
        f"{spec.key}: sweep of {len(seeds)} seeds x {len(integrators)} integrators x "
        f"{len(horizons)} horizons produced {len(frame)} rows"
    )
    return frame


def sweep_spread(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Spread of each parameter across sweep configurations.

    Estimates are first averaged per (integrator, horizon, seed); the spread
    is the population standard deviation of those means, and the relative
    spread divides it by the magnitude of their mean.
    """
    if frame.empty:
        return pd.DataFrame(columns=SPREAD_COLUMNS)
    keys = ['phenomenon', 'setting', 'param_kind', 'param_name']
    per_config = (
        frame.groupby(keys + ['integrator', 'horizon', 'seed'], sort=True)['estimate']
        .mean()
        .reset_index()
    )
    records = []
    for key, group in per_config.groupby(keys, sort=True):
        means = group['estimate'].to_numpy(dtype=float)
        spread = float(np.std(means))
        center = abs(float(np.mean(means)))
        records.append({
            'phenomenon': key[0],
            'setting': key[1],
            'param_kind': key[2],
            'param_name': key[3],
            'n_configs': len(means),
            'spread': spread,
            'relative_spread': spread / center if center > 0 else np.nan,
        })
    return pd.DataFrame(records, columns=SPREAD_COLUMNS)
