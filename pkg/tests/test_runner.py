"""
Unit tests for the clip runner and the robustness sweeps.
"""

import math

import numpy as np
import pytest

from src.analytics.calibration import load_rules
from src.analytics.estimator import FitConfig, LossKind
from src.analytics.robustness import (
    SPREAD_COLUMNS,
    SUMMARY_COLUMNS,
    horizon_ablation,
    horizon_config,
    integrator_comparison,
    robustness_sweep,
    sweep_spread,
)
from src.analytics.runner import config_for, run_clip, run_clipset
from src.data.dataio import ResultsRow, results_to_frame
from src.data.synth_oracle import generate, preset
from src.physics.base import FamilyTag, IntegratorKind, OdeFamily, ParamVector


@pytest.fixture(scope='module')
def rules():
    return load_rules()


@pytest.fixture
def led_clipset():
    return generate(preset('lab_led_2s').with_overrides(jitter=0.0), seed=0)


@pytest.fixture
def quick():
    return FitConfig(epochs=300, lr_params=0.05)


def rows_by_kind(outcome):
    return [(row.param_kind, row.param_name) for row in outcome.rows]


class TestConfigFor:
    """Test per-preset start overrides."""

    def test_period_start_for_pendulum(self):
        assert config_for(preset('pend_45'), FitConfig()).init_strategy == 'period'

    def test_explicit_start_for_drop(self):
        spec = preset('drop_50')
        assert config_for(spec, FitConfig()).init_params == spec.init_params

    def test_base_start_wins(self):
        spec = preset('drop_50')
        start = ParamVector(spec.family, (-5.0,))
        assert config_for(spec, FitConfig(init_params=start)).init_params == start

    def test_explicit_strategy_wins(self):
        base = FitConfig(init_strategy='default')
        assert config_for(preset('pend_45'), base) is base
        assert config_for(preset('drop_50'), base).init_params is None


class TestRunClip:
    """Test one fitted trial."""

    def test_led_rows(self, led_clipset, quick, rules):
        outcome = run_clip(led_clipset, 0, quick, rules)
        assert not outcome.failed
        assert rows_by_kind(outcome) == [('latent', 'lambda'), ('si', 'lambda')]
        for row in outcome.rows:
            assert row.gt == pytest.approx(2.30)
            assert row.abs_error == pytest.approx(abs(row.estimate - 2.30))
            assert row.integrator == 'euler'
            assert row.loss_kind == 'one-step'
            assert row.horizon == 1
            assert row.split == led_clipset.splits[0]
            assert row.epochs_run == 300
            assert math.isfinite(row.grad_norm_e200)
            assert math.isnan(row.extrap_e10)
        assert outcome.rows[0].estimate == outcome.rows[1].estimate

    def test_led_estimate_shows_euler_bias(self, led_clipset, rules):
        start = ParamVector(led_clipset.spec.family, (2.0,))
        outcome = run_clip(led_clipset, 0, FitConfig(epochs=500, init_params=start), rules)
        biased = (1.0 - math.exp(-2.30 * 0.05)) / 0.05
        assert outcome.rows[0].estimate == pytest.approx(biased, rel=1e-3)

    def test_falling_ball_uses_least_squares(self, rules):
        spec = preset('falling_big').with_overrides(jitter=0.0, duration=1.0, trial_count=1, split_ratio=(1, 0, 0))
        outcome = run_clip(generate(spec, seed=0), 0, FitConfig(), rules)
        assert rows_by_kind(outcome) == [
            ('latent', 'g'), ('latent', 'r0_f'), ('latent', 'h0'), ('si', 'g'), ('si', 'r0'),
        ]
        first = outcome.rows[0]
        assert first.integrator == 'direct_ls'
        assert first.loss_kind == 'least_squares'
        assert first.horizon == 0
        assert outcome.fit is None
        values = {(r.param_kind, r.param_name): r for r in outcome.rows}
        assert values[('si', 'g')].estimate == pytest.approx(9.81, rel=1e-3)
        assert values[('si', 'r0')].gt == 0.11

    def test_pendulum_period_lengths(self, rules):
        spec = preset('pend_20').with_overrides(jitter=0.0, trial_count=1, split_ratio=(1, 0, 0)).capped(600)
        outcome = run_clip(generate(spec, seed=0), 0, FitConfig(epochs=200), rules)
        si = {r.param_name: r for r in outcome.rows if r.param_kind == 'si'}
        assert set(si) == {'L', 'zeta', 'L_period', 'L_amplitude_corrected'}
        assert si['L_period'].gt == 0.50
        assert si['L_amplitude_corrected'].estimate == pytest.approx(0.50, rel=0.005)
        assert math.isfinite(outcome.rows[0].extrap_e50)

    def test_baseline_fits_from_default_start(self, rules):
        spec = preset('pend_45').with_overrides(jitter=0.0, trial_count=1, split_ratio=(1, 0, 0)).capped(600)
        outcome = run_clip(generate(spec, seed=0), 0, FitConfig.preset('baseline', epochs=20), rules)
        assert not outcome.failed
        latent = {r.param_name: r.estimate for r in outcome.rows if r.param_kind == 'latent'}
        assert latent == {'g_over_L': 0.5, 'zeta': 0.05}
        assert outcome.fit.grad_norm_curve[0] < 1e-8

    def test_failure_is_reported(self, led_clipset, rules):
        foreign = ParamVector(OdeFamily(FamilyTag.TORRICELLI), (0.1,))
        outcome = run_clip(led_clipset, 1, FitConfig(init_params=foreign), rules)
        assert outcome.failed
        assert outcome.rows == []
        assert str(led_clipset.clip_id(1)) in outcome.error

    def test_subset_of_trials(self, led_clipset, quick, rules):
        outcomes = run_clipset(led_clipset, quick, rules, trials=[0, 2])
        assert [o.clip_id.trial for o in outcomes] == [0, 2]
        assert all(o.clip_id.seed == 0 for o in outcomes)


class TestRobustness:
    """Test the design-choice sweeps."""

    def test_horizon_config(self):
        assert horizon_config(FitConfig(), 1).loss is LossKind.ONE_STEP
        config = horizon_config(FitConfig(), 3)
        assert config.loss is LossKind.MULTI_STEP
        assert config.weights == (1.0, 1.0, 0.5)

    def test_horizon_ablation(self, led_clipset, quick, rules):
        summary = horizon_ablation(led_clipset, horizons=(1, 2), base=quick, rules=rules, trials=[0, 1])
        assert list(summary.columns) == SUMMARY_COLUMNS
        latent = summary[summary['param_kind'] == 'latent']
        assert latent['value'].tolist() == [1, 2]
        assert (latent['axis'] == 'horizon').all()
        assert (latent['n_clips'] == 2).all()

    @pytest.mark.slow
    def test_longer_horizon_helps_noisy_constant_acceleration(self, rules):
        spec = preset('drop_100').with_overrides(jitter=0.0, noise_std=0.01)
        summary = horizon_ablation(generate(spec, seed=42), horizons=(1, 5),
                                   base=FitConfig(epochs=500, lr_params=0.05), rules=rules)
        latent = summary[(summary['param_kind'] == 'latent') & (summary['param_name'] == 'a')]
        latent = latent.set_index('value')
        assert (latent['n_clips'] == spec.trial_count).all()
        assert (latent['diverged'] == 0).all()
        assert latent.loc[5, 'mae'] <= latent.loc[1, 'mae']

    @pytest.mark.slow
    @pytest.mark.parametrize('name', ['two_pend_20', 'two_pend_45', 'two_pend_90'])
    def test_coupled_horizon_ablation_at_sixty_fps(self, name, rules):
        spec = preset(name).with_overrides(jitter=0.0, trial_count=2, split_ratio=(2, 0, 0))
        assert spec.dt == pytest.approx(1.0 / 60.0)
        summary = horizon_ablation(generate(spec, seed=42), horizons=(1, 5),
                                   base=FitConfig(epochs=100), rules=rules)
        latent = summary[summary['param_kind'] == 'latent']
        assert sorted(latent['value'].unique()) == [1, 5]
        assert set(latent['param_name']) == set(spec.family.param_names)
        assert (latent['n_clips'] == 2).all()
        for _, row in latent.iterrows():
            assert row['diverged'] > 0 or math.isfinite(row['mae'])

    def test_integrator_comparison(self, led_clipset, quick, rules):
        summary = integrator_comparison(
            led_clipset, (IntegratorKind.EULER_CORRECTED, IntegratorKind.RK4), base=quick, rules=rules, trials=[0],
        )
        latent = summary[summary['param_kind'] == 'latent']
        assert sorted(latent['value']) == ['euler', 'rk4']

    def test_sweep_and_spread(self, quick, rules):
        spec = preset('lab_led_2s')
        frame = robustness_sweep(spec, seeds=[1, 2], integrators=[IntegratorKind.EULER_CORRECTED],
                                 horizons=[1, 2], base=quick, rules=rules, trials=[0])
        assert len(frame) == 2 * 2 * 2
        assert sorted(frame['seed'].unique()) == [1, 2]
        spread = sweep_spread(frame)
        assert list(spread.columns) == SPREAD_COLUMNS
        assert (spread['n_configs'] == 4).all()
        assert (spread['spread'] >= 0).all()

    def test_spread_of_identical_estimates(self, led_clipset, quick, rules):
        outcome = run_clip(led_clipset, 0, quick, rules)
        frame = results_to_frame(outcome.rows)
        spread = sweep_spread(frame)
        assert np.allclose(spread['spread'], 0.0)

    def test_spread_is_population_std_of_config_means(self):
        common = dict(phenomenon='led', setting='lab_led_2s', family='first_order_decay', loss_kind='one-step',
                      param_name='lambda', gt=2.30, integrator='euler')
        rows = [
            ResultsRow(clip=0, seed=1, horizon=1, estimate=2.0, **common),
            ResultsRow(clip=1, seed=1, horizon=1, estimate=2.2, **common),
            ResultsRow(clip=0, seed=1, horizon=2, estimate=2.4, **common),
            ResultsRow(clip=0, seed=2, horizon=1, estimate=2.6, **common),
        ]
        spread = sweep_spread(results_to_frame(rows)).iloc[0]
        means = np.array([2.1, 2.4, 2.6])
        assert spread['n_configs'] == 3
        assert spread['spread'] == pytest.approx(np.sqrt(np.mean((means - means.mean()) ** 2)))
        assert spread['relative_spread'] == pytest.approx(spread['spread'] / means.mean())

    def test_empty_frames(self):
        assert sweep_spread(results_to_frame([])).empty


if __name__ == '__main__':
    pytest.main([__file__, '-v', '--tb=short'])
