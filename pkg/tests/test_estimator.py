"""
Unit tests for the estimator: prediction windows, losses and their
gradients, Adam fits, the least-squares oracle and period extraction.
"""

import math

import numpy as np
import pytest

from src.analytics.estimator import (
    AdamOptimizer,
    FitConfig,
    LossKind,
    default_init,
    default_weights,
    direct_ls_fit,
    evaluate_loss,
    extract_period,
    fit_clip,
    initial_guess,
    multi_step_loss,
    one_step_loss,
    prediction_error,
    prediction_windows,
)
from src.data.synth_oracle import generate
from src.physics.base import (
    DomainError,
    FamilyTag,
    IllPosedFitError,
    InsufficientPeaksError,
    IntegratorKind,
    IntegratorMismatchError,
    OdeFamily,
    ParamVector,
    StateShapeError,
    StateVector,
    Trajectory,
    TrajectoryTooShortError,
    UnsupportedFamilyError,
)
from src.physics.integrators import integrate
from tests.conftest import make_spec, stepper_trajectory


def parabola(a=-9.81, z0=1.5, dt=1.0 / 60.0, samples=31) -> Trajectory:
    t = dt * np.arange(samples)
    return Trajectory(z0 + 0.5 * a * t ** 2, dt=dt)


def decay_curve(rate=2.30, dt=0.05, duration=2.0) -> Trajectory:
    t = dt * np.arange(int(round(duration / dt)) + 1)
    return Trajectory(np.exp(-rate * t), dt=dt)


def fine_rk4_trajectory(family, params, initial, dt, samples, substeps=10) -> Trajectory:
    """Reference trajectory from RK4 at dt / substeps, kept on the frame grid."""
    y0 = StateVector(*initial).to_flat()[None, :]
    states = integrate(IntegratorKind.RK4, family, np.asarray(params, dtype=float), y0,
                       dt / substeps, (samples - 1) * substeps, stride=substeps)
    return Trajectory(states[:, 0, :family.body_count], dt=dt)


def gradient_cases():
    """(family, trajectory, evaluation params) for the gradient checks."""
    sol = OdeFamily(FamilyTag.SECOND_ORDER_LINEAR)
    pendulum = OdeFamily(FamilyTag.NONLINEAR_PENDULUM)
    coupled = OdeFamily(FamilyTag.COUPLED_PENDULUM, 2)
    contact = OdeFamily(FamilyTag.COUPLED_CONTACT, 2)
    decay = OdeFamily(FamilyTag.FIRST_ORDER_DECAY)
    torricelli = OdeFamily(FamilyTag.TORRICELLI)
    accel = OdeFamily(FamilyTag.CONSTANT_ACCEL)
    dt = 1.0 / 60.0
    return {
        'second_order_linear': (
            sol, stepper_trajectory(IntegratorKind.RK4, sol, (1.0, 0.1), ((1.0,), (0.0,)), dt, 200), (0.7, 0.3)),
        'nonlinear_pendulum': (
            pendulum, stepper_trajectory(IntegratorKind.RK4, pendulum, (19.62, 0.05), ((0.8,), (0.0,)), dt, 200),
            (17.0, 0.1)),
        'coupled_pendulum': (
            coupled,
            stepper_trajectory(IntegratorKind.RK4, coupled, (19.62, 19.62, 0.02, 0.02, 5.0),
                               ((0.3, -0.3), (0.0, 0.0)), dt, 200),
            (18.0, 21.0, 0.05, 0.01, 3.0)),
        'coupled_contact': (
            contact,
            stepper_trajectory(IntegratorKind.RK4, contact, (1.0, 0.5), ((-1.0, 0.0), (1.0, 0.0)), dt, 200),
            (1.5, 0.3)),
        'first_order_decay': (decay, decay_curve(), (1.8,)),
        'torricelli': (
            torricelli, stepper_trajectory(IntegratorKind.RK4, torricelli, (0.3,), ((1.0,),), 0.05, 100), (0.4,)),
        'constant_accel': (accel, parabola(), (-7.0,)),
    }


GRADIENT_CASES = gradient_cases()


class TestPredictionWindows:
    """Test window construction."""

    def test_second_order_window_count(self, oscillator_clip, sol):
        assert prediction_windows(sol, oscillator_clip, 1).count == 999
        assert prediction_windows(sol, oscillator_clip, 5).count == 995

    def test_backward_velocity(self, sol):
        traj = Trajectory(np.array([0.0, 1.0, 3.0, 6.0]), dt=0.5)
        windows = prediction_windows(sol, traj, 1)
        assert windows.start[:, 1].tolist() == [2.0, 4.0]
        assert windows.targets[0, :, 0].tolist() == [3.0, 6.0]

    def test_first_order_starts_at_zero(self, decay):
        windows = prediction_windows(decay, decay_curve(), 3)
        assert windows.count == 41 - 3
        assert windows.start[0, 0] == 1.0

    def test_too_short(self, sol):
        with pytest.raises(TrajectoryTooShortError):
            prediction_windows(sol, Trajectory(np.array([0.0, 1.0, 2.0]), dt=0.1), 2)

    def test_body_count_mismatch(self, coupled_pendulum, oscillator_clip):
        with pytest.raises(StateShapeError):
            prediction_windows(coupled_pendulum, oscillator_clip, 1)

    def test_unknown_stencil(self, sol, oscillator_clip):
        with pytest.raises(DomainError):
            prediction_windows(sol, oscillator_clip, 1, velocity='forward')


class TestFitConfig:
    """Test fit configuration validation and presets."""

    def test_default_weights(self):
        assert default_weights(5) == (1.0, 1.0, 0.5, 0.5, 0.25)
        assert default_weights(1) == (1.0,)

    def test_multistep_preset(self):
        config = FitConfig.preset('multistep')
        assert config.horizon == 5
        assert config.loss is LossKind.MULTI_STEP
        assert config.weights == (1.0, 1.0, 0.5, 0.5, 0.25)

    def test_baseline_preset(self):
        config = FitConfig.preset('baseline')
        assert config.integrator is IntegratorKind.EULER_UNCORRECTED
        assert config.init_strategy == 'default'
        assert FitConfig.preset('corrected').init_strategy is None

    def test_unknown_init_strategy(self):
        with pytest.raises(DomainError):
            FitConfig(init_strategy='random')

    def test_preset_overrides(self):
        config = FitConfig.preset('corrected', epochs=7, integrator='rk4')
        assert config.epochs == 7
        assert config.integrator is IntegratorKind.RK4

    def test_unknown_preset(self):
        with pytest.raises(DomainError):
            FitConfig.preset('fancy')

    def test_one_step_needs_horizon_one(self):
        with pytest.raises(DomainError):
            FitConfig(loss=LossKind.ONE_STEP, horizon=2)

    def test_weights_must_match_horizon(self):
        with pytest.raises(DomainError):
            FitConfig(loss=LossKind.MULTI_STEP, horizon=3, weights=(1.0, 1.0))


class TestLosses:
    """Test one-step and multi-step losses."""

    def test_k1_equals_one_step_bitwise(self, sol, damped_oscillator):
        params = ParamVector(sol, (0.8, 0.2))
        one, one_grad = one_step_loss(sol, params, damped_oscillator)
        multi, multi_grad = multi_step_loss(sol, params, damped_oscillator, horizon=1, weights=[1.0])
        assert one == multi
        assert np.array_equal(one_grad, multi_grad)

    def test_small_loss_at_truth(self, sol, damped_oscillator):
        loss, _ = one_step_loss(sol, ParamVector(sol, (1.0, 0.1)), damped_oscillator)
        assert loss < 1e-6

    @pytest.mark.parametrize('name', ['second_order_linear', 'nonlinear_pendulum', 'coupled_pendulum',
                                      'coupled_contact', 'constant_accel'])
    def test_uncorrected_euler_has_zero_gradient(self, name):
        family, traj, values = GRADIENT_CASES[name]
        _, grad = one_step_loss(family, ParamVector(family, values), traj, IntegratorKind.EULER_UNCORRECTED)
        assert np.all(grad == 0.0)

    def test_uncorrected_euler_on_first_order(self, decay):
        with pytest.raises(IntegratorMismatchError):
            one_step_loss(decay, ParamVector(decay, (1.0,)), decay_curve(), IntegratorKind.EULER_UNCORRECTED)

    def test_divergence_returns_guard(self, sol, damped_oscillator):
        loss, grad = multi_step_loss(sol, ParamVector(sol, (1e6, 0.0)), damped_oscillator, horizon=5, limit=1e3)
        assert loss == 1e3
        assert np.all(grad == 0.0)

    def test_weight_count_mismatch(self, sol, damped_oscillator):
        with pytest.raises(DomainError):
            multi_step_loss(sol, ParamVector(sol, (1.0, 0.1)), damped_oscillator, horizon=3, weights=[1.0])

    def test_stiff_coupled_loss_grows_with_horizon(self):
        family = OdeFamily(FamilyTag.COUPLED_PENDULUM, 2)
        truth = (19.62, 19.62, 0.02, 0.02, 100.0)
        traj = fine_rk4_trajectory(family, truth, ((0.3, -0.3), (0.0, 0.0)), 0.1, 60, substeps=50)
        params = ParamVector(family, truth)
        losses = [multi_step_loss(family, params, traj, horizon=k)[0] for k in range(1, 6)]
        assert all(b > a for a, b in zip(losses, losses[1:]))

    def test_prediction_error_matches_one_step_loss(self, sol, damped_oscillator):
        params = ParamVector(sol, (0.9, 0.1))
        loss, _ = one_step_loss(sol, params, damped_oscillator)
        assert prediction_error(sol, params, damped_oscillator) == loss

    def test_prediction_error_for_algebraic_family(self):
        family = OdeFamily(FamilyTag.FALLING_BALL_RADIUS)
        params = ParamVector(family, (9.81, 110.0, 1.0))
        t = np.arange(61) / 60.0
        traj = Trajectory(110.0 / (1.0 + 0.5 * 9.81 * t ** 2), dt=1.0 / 60.0)
        assert prediction_error(family, params, traj) == pytest.approx(0.0, abs=1e-20)


@pytest.mark.parametrize('horizon', [1, 2, 3, 5])
@pytest.mark.parametrize('kind', list(IntegratorKind), ids=[k.value for k in IntegratorKind])
@pytest.mark.parametrize('name', list(GRADIENT_CASES))
def test_gradient_matches_finite_differences(name, kind, horizon):
    family, traj, values = GRADIENT_CASES[name]
    if family.is_first_order and kind is IntegratorKind.EULER_UNCORRECTED:
        pytest.skip("uncorrected Euler is undefined for first-order families")
    weights = default_weights(horizon)
    windows = prediction_windows(family, traj, horizon)
    params = np.array(values, dtype=float)

    grad = evaluate_loss(family, params, windows, kind, weights).grad
    fd = np.zeros_like(params)
    for j in range(len(params)):
        h = 1e-6 * max(1.0, abs(params[j]))
        bump = np.zeros_like(params)
        bump[j] = h
        plus = evaluate_loss(family, params + bump, windows, kind, weights, need_grad=False).loss
        minus = evaluate_loss(family, params - bump, windows, kind, weights, need_grad=False).loss
        fd[j] = (plus - minus) / (2 * h)

    assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd) + 1e-15


class TestFitClip:
    """Test Adam fits."""

    def test_recovers_damped_oscillator(self, sol, damped_oscillator):
        result = fit_clip(sol, damped_oscillator, FitConfig(epochs=1000))
        alpha, beta = result.final_params.values
        assert alpha == pytest.approx(1.0, rel=0.01)
        assert beta == pytest.approx(0.1, rel=0.01)
        assert not result.diverged
        assert result.epochs_run == 1000

    def test_loss_decreases_block_by_block(self, sol, damped_oscillator):
        result = fit_clip(sol, damped_oscillator, FitConfig(epochs=500))
        blocks = [min(result.loss_curve[i:i + 50]) for i in range(0, 500, 50)]
        assert all(b <= a * (1 + 1e-6) for a, b in zip(blocks, blocks[1:]))

    def test_uncorrected_euler_keeps_init(self, sol, damped_oscillator):
        result = fit_clip(sol, damped_oscillator, FitConfig.preset('baseline', epochs=200))
        assert result.final_params.values == (0.5, 0.05)
        assert max(result.grad_norm_curve) < 1e-8

    def test_decay_bias_of_forward_euler(self, decay):
        traj = decay_curve(dt=0.05)
        config = FitConfig(epochs=500, init_params=ParamVector(decay, (2.0,)))
        rate = fit_clip(decay, traj, config).final_params['lambda']
        assert rate == pytest.approx((1.0 - math.exp(-2.30 * 0.05)) / 0.05, rel=1e-3)

    def test_recovers_decay_rate(self, decay):
        traj = decay_curve(dt=0.005)
        config = FitConfig(epochs=500, init_params=ParamVector(decay, (2.0,)))
        assert fit_clip(decay, traj, config).final_params['lambda'] == pytest.approx(2.30, rel=0.01)

    def test_rk4_removes_decay_bias(self, decay):
        config = FitConfig(epochs=500, integrator=IntegratorKind.RK4, init_params=ParamVector(decay, (2.0,)))
        assert fit_clip(decay, decay_curve(), config).final_params['lambda'] == pytest.approx(2.30, rel=1e-3)

    def test_recovers_constant_acceleration(self, accel):
        config = FitConfig(epochs=600, init_params=ParamVector(accel, (-9.0,)))
        assert fit_clip(accel, parabola(), config).final_params['a'] == pytest.approx(-9.81, rel=0.01)

    def test_deterministic(self, sol, damped_oscillator):
        config = FitConfig(epochs=100)
        a = fit_clip(sol, damped_oscillator, config)
        b = fit_clip(sol, damped_oscillator, config)
        assert a.loss_curve == b.loss_curve
        assert a.final_params == b.final_params
        assert a.ode_residual == b.ode_residual

    def test_divergence_stops_fit(self, sol, damped_oscillator):
        config = FitConfig(epochs=50, init_params=ParamVector(sol, (1e6, 0.0)), divergence_limit=1e3)
        result = fit_clip(sol, damped_oscillator, config)
        assert result.diverged
        assert result.divergence_epoch == 1
        assert result.epochs_run == 1

    def test_grad_norm_snapshot(self, sol, damped_oscillator):
        result = fit_clip(sol, damped_oscillator, FitConfig(epochs=60))
        assert result.grad_norm_at(1) == result.grad_norm_curve[0]
        assert math.isnan(result.grad_norm_at(200))

    def test_nonnegative_rate_is_projected(self, decay):
        traj = Trajectory(np.exp(0.5 * np.arange(41) * 0.05), dt=0.05)
        config = FitConfig(epochs=100, init_params=ParamVector(decay, (0.05,)))
        assert fit_clip(decay, traj, config).final_params['lambda'] == 0.0

    def test_foreign_init_params(self, sol, decay, damped_oscillator):
        config = FitConfig(epochs=5, init_params=ParamVector(decay, (1.0,)))
        with pytest.raises(UnsupportedFamilyError):
            fit_clip(sol, damped_oscillator, config)


class TestAdam:
    """Test the optimizer update."""

    def test_first_step_moves_by_learning_rate(self):
        optimizer = AdamOptimizer(learning_rate=0.01)
        updated = optimizer.update(np.array([1.0, 1.0]), np.array([3.0, -1e-3]))
        assert updated == pytest.approx([0.99, 1.01], abs=1e-6)

    def test_zero_gradient_leaves_params(self):
        optimizer = AdamOptimizer()
        params = np.array([0.5, 0.05])
        for _ in range(10):
            params = optimizer.update(params, np.zeros(2))
        assert params.tolist() == [0.5, 0.05]


class TestDirectLeastSquares:
    """Test the least-squares oracle."""

    def test_undamped_oscillator(self, sol, oscillator_clip):
        alpha, beta = direct_ls_fit(sol, oscillator_clip).values
        assert alpha == pytest.approx(1.0, abs=1e-4)
        assert abs(beta) < 1e-3

    def test_damped_oscillator(self, sol, damped_oscillator):
        alpha, beta = direct_ls_fit(sol, damped_oscillator).values
        assert alpha == pytest.approx(1.0, rel=1e-3)
        assert beta == pytest.approx(0.1, rel=1e-2)

    def test_constant_acceleration(self, accel):
        assert direct_ls_fit(accel, parabola())['a'] == pytest.approx(-9.81, rel=1e-9)

    def test_decay(self, decay):
        assert direct_ls_fit(decay, decay_curve(dt=0.01))['lambda'] == pytest.approx(2.30, rel=1e-3)

    def test_coupled_pendulum(self, coupled_pendulum):
        truth = (19.62, 15.0, 0.02, 0.04, 5.0)
        traj = fine_rk4_trajectory(coupled_pendulum, truth, ((0.3, -0.1), (0.0, 0.0)), 1.0 / 120.0, 1201)
        fitted = direct_ls_fit(coupled_pendulum, traj).values
        assert fitted[0] == pytest.approx(19.62, rel=1e-3)
        assert fitted[4] == pytest.approx(5.0, rel=1e-2)

    def test_constant_trajectory_is_ill_posed(self, sol):
        with pytest.raises(IllPosedFitError):
            direct_ls_fit(sol, Trajectory(np.zeros(100), dt=0.01))

    def test_apparent_radius(self):
        family = OdeFamily(FamilyTag.FALLING_BALL_RADIUS)
        t = np.arange(121) / 60.0
        traj = Trajectory(110.0 / (1.0 + 0.5 * 9.81 * t ** 2), dt=1.0 / 60.0)
        g, r0_f, h0 = direct_ls_fit(family, traj, fixed={'h0': 1.0}).values
        assert g == pytest.approx(9.81, rel=1e-6)
        assert r0_f == pytest.approx(110.0, rel=1e-6)
        assert h0 == 1.0

    def test_apparent_radius_needs_height(self):
        family = OdeFamily(FamilyTag.FALLING_BALL_RADIUS)
        traj = Trajectory(np.linspace(100.0, 50.0, 20), dt=0.1)
        with pytest.raises(IllPosedFitError):
            direct_ls_fit(family, traj)

    @pytest.mark.slow
    def test_agrees_with_adam_over_random_draws(self, sol):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            alpha, beta = rng.uniform(0.5, 2.0), rng.uniform(0.05, 0.2)
            spec = make_spec(sol, (alpha, beta), StateVector((1.0,), (0.0,)), dt=1.0 / 60.0, duration=20.0)
            traj = generate(spec, seed=0).trajectories[0]
            ls = direct_ls_fit(sol, traj).as_array()
            adam = fit_clip(sol, traj, FitConfig(epochs=1000)).final_params.as_array()
            assert np.all(np.abs(adam - ls) <= 0.02 * np.abs(ls))


class TestPeriodAndInit:
    """Test period extraction and start values."""

    def test_pure_cosine(self):
        period = 1.5
        dt = period / 100
        t = dt * np.arange(1001)
        assert extract_period(Trajectory(np.cos(2 * math.pi * t / period), dt=dt)) == pytest.approx(period, rel=1e-3)

    def test_constant_signal(self):
        with pytest.raises(InsufficientPeaksError):
            extract_period(Trajectory(np.ones(200), dt=0.01))

    def test_small_angle_pendulum(self, pendulum):
        traj = stepper_trajectory(IntegratorKind.RK4, pendulum, (9.81 / 0.5, 0.0), ((0.05,), (0.0,)), 0.01, 1000)
        assert extract_period(traj) == pytest.approx(2 * math.pi * math.sqrt(0.5 / 9.81), rel=0.01)

    def test_default_init(self, sol, coupled_pendulum):
        assert default_init(sol).values == (0.5, 0.05)
        assert default_init(coupled_pendulum).values == (0.5, 0.5, 0.05, 0.05, 0.5)

    def test_algebraic_family_has_no_gradient_start(self):
        with pytest.raises(UnsupportedFamilyError):
            default_init(OdeFamily(FamilyTag.FALLING_BALL_RADIUS))

    def test_period_start_for_large_swing(self, pendulum):
        traj = fine_rk4_trajectory(pendulum, (19.62, 0.0), ((math.radians(45.0),), (0.0,)), 1.0 / 60.0, 601)
        start = initial_guess(pendulum, traj, 'period')
        assert start['g_over_L'] == pytest.approx(19.62, rel=0.01)
        assert start['zeta'] == 0.05

    def test_least_squares_start(self, sol, damped_oscillator):
        start = initial_guess(sol, damped_oscillator, 'ls')
        assert start['alpha'] == pytest.approx(1.0, rel=1e-3)

    def test_least_squares_start_falls_back(self, sol):
        start = initial_guess(sol, Trajectory(np.zeros(50), dt=0.01), 'ls')
        assert start == default_init(sol)

    def test_strategy_needs_trajectory(self, sol):
        with pytest.raises(DomainError):
            initial_guess(sol, None, 'period')


if __name__ == '__main__':
    pytest.main([__file__, '-v', '--tb=short'])
