"""
Unit tests for the ground-truth fitting procedures.
"""

import logging
import math

import numpy as np
import pytest
from scipy.special import ellipk

from src.analytics.gt_fit import (
    PUBLISHED_PERIOD_CORRECTIONS,
    accel_from_friction,
    amplitude_correction_table,
    complete_elliptic_k,
    corrected_length,
    exact_period,
    fit_envelope,
    fit_envelope_peaks,
    friction_from_accel,
    levenberg_marquardt,
    measure_ground_truth,
    period_factor,
    poly_accel_fit,
)
from src.data.synth_oracle import generate, preset
from src.physics.base import DomainError, InsufficientPeaksError, Trajectory, TrajectoryTooShortError


def damped_cosine(zeta, omega=math.sqrt(19.62), dt=1.0 / 60.0, duration=150.0) -> Trajectory:
    t = dt * np.arange(int(round(duration / dt)) + 1)
    return Trajectory(0.3 * np.exp(-0.5 * zeta * t) * np.cos(omega * t), dt=dt)


class TestEllipticPeriod:
    """Test the AGM elliptic integral and exact pendulum period."""

    @pytest.mark.parametrize('k', [0.0, 0.1, 0.3826834, 0.5, 0.7071068, 0.9, 0.99])
    def test_agm_matches_scipy(self, k):
        assert complete_elliptic_k(k) == pytest.approx(float(ellipk(k * k)), rel=1e-12)

    def test_k_at_zero(self):
        assert complete_elliptic_k(0.0) == math.pi / 2

    def test_modulus_range(self):
        with pytest.raises(DomainError):
            complete_elliptic_k(1.0)

    def test_small_angle_period(self):
        assert exact_period(0.5, 9.81, 0.0) == pytest.approx(1.41850, abs=1e-5)

    def test_tiny_amplitude_limit(self):
        ratio = exact_period(0.5, 9.81, 1e-4) / exact_period(0.5, 9.81, 0.0)
        assert ratio == pytest.approx(1.0, abs=1e-6)

    def test_monotone_in_amplitude(self):
        periods = [exact_period(0.5, 9.81, theta) for theta in np.linspace(0.0, 3.0, 31)]
        assert all(b > a for a, b in zip(periods, periods[1:]))

    def test_amplitude_must_be_below_pi(self):
        with pytest.raises(DomainError):
            exact_period(0.5, 9.81, math.pi)

    def test_length_must_be_positive(self):
        with pytest.raises(DomainError):
            exact_period(0.0, 9.81, 0.1)

    def test_ninety_degree_factor(self):
        assert period_factor(math.pi / 2) - 1.0 == pytest.approx(0.18034, abs=1e-5)


class TestCorrectedLength:
    """Test length recovery from a measured period."""

    def test_round_trip_at_ninety_degrees(self):
        theta = math.pi / 2
        estimate = corrected_length(exact_period(0.5, 9.81, theta), theta)
        assert estimate.corrected == pytest.approx(0.5, abs=1e-9)
        assert estimate.small_angle > estimate.corrected

    def test_small_angle_limit(self):
        estimate = corrected_length(1.4185, 0.0)
        assert estimate.corrected == estimate.small_angle

    def test_random_round_trips(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            length, theta = rng.uniform(0.1, 2.0), rng.uniform(0.0, 3.0)
            period = exact_period(length, 9.81, theta)
            assert corrected_length(period, theta).corrected == pytest.approx(length, abs=1e-9)

    def test_period_must_be_positive(self):
        with pytest.raises(DomainError):
            corrected_length(0.0, 0.1)


class TestAmplitudeTable:
    """Test the amplitude-correction comparison table."""

    def test_rows(self):
        rows = amplitude_correction_table()
        assert [row['theta0_deg'] for row in rows] == [20.0, 45.0, 90.0]
        assert rows[2]['correction'] == pytest.approx(0.18034, abs=1e-5)
        assert rows[2]['published_correction'] == PUBLISHED_PERIOD_CORRECTIONS[90.0]
        assert rows[2]['L_corrected'] == pytest.approx(0.5, abs=1e-9)

    def test_disagreement_is_logged(self, caplog):
        with caplog.at_level(logging.WARNING, logger='src.analytics.gt_fit'):
            amplitude_correction_table()
        warned = [r.getMessage() for r in caplog.records if r.levelno == logging.WARNING]
        assert len(warned) == 2
        assert any('90 deg' in message for message in warned)
        assert not any('20 deg' in message for message in warned)

    def test_unpublished_angle(self):
        row = amplitude_correction_table([30.0])[0]
        assert math.isnan(row['published_correction'])


class TestEnvelope:
    """Test damping from the amplitude envelope."""

    def test_exact_exponential_peaks(self):
        t = np.linspace(0.0, 10.0, 12)
        fit = fit_envelope_peaks(t, np.exp(-0.5 * t))
        assert fit.zeta == pytest.approx(1.0, abs=1e-9)
        assert fit.a0 == pytest.approx(1.0, abs=1e-9)
        assert fit.peaks_used == 12
        assert fit.ci95 == pytest.approx(0.0, abs=1e-6)

    def test_too_few_peaks(self):
        with pytest.raises(InsufficientPeaksError):
            fit_envelope_peaks([0.0, 1.0], [1.0, 0.5])

    def test_growing_envelope_is_flagged(self, caplog):
        t = np.linspace(0.0, 5.0, 6)
        with caplog.at_level(logging.WARNING, logger='src.analytics.gt_fit'):
            fit = fit_envelope_peaks(t, np.exp(0.1 * t))
        assert not fit.decaying
        assert fit.zeta == pytest.approx(-0.2, abs=1e-9)
        assert 'not decaying' in caplog.text

    def test_damped_oscillation(self):
        fit = fit_envelope(damped_cosine(0.02))
        assert fit.zeta == pytest.approx(0.02, rel=0.02)
        assert fit.peaks_used > 100

    def test_undamped_oscillation(self):
        assert abs(fit_envelope(damped_cosine(0.0, duration=30.0)).zeta) < 1e-3

    def test_flat_signal(self):
        with pytest.raises(InsufficientPeaksError):
            fit_envelope(Trajectory(np.zeros(300), dt=0.01))


class TestFriction:
    """Test friction inversion on an incline."""

    def test_reported_example(self):
        a = 9.81 * (math.sin(math.radians(45)) - 0.2 * math.cos(math.radians(45)))
        assert friction_from_accel(45.0, a) == pytest.approx(0.2, abs=1e-12)
        assert friction_from_accel(45.0, 5.5437, g=9.8) == pytest.approx(0.2, abs=1e-4)

    def test_frictionless(self):
        assert friction_from_accel(30.0, 9.81 * 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_static_limit(self):
        assert friction_from_accel(60.0, 0.0) == pytest.approx(math.tan(math.radians(60.0)))

    def test_round_trip_grid(self):
        for alpha in np.linspace(1.0, 89.0, 23):
            for mu in np.linspace(0.0, 1.0, 11):
                assert friction_from_accel(alpha, accel_from_friction(alpha, mu)) == pytest.approx(mu, abs=1e-12)

    @pytest.mark.parametrize('alpha', [0.0, 90.0, -5.0])
    def test_angle_out_of_range(self, alpha):
        with pytest.raises(DomainError):
            friction_from_accel(alpha, 1.0)


class TestPolyAccel:
    """Test the quadratic acceleration fit."""

    def test_exact_parabola(self):
        t = np.arange(300) / 60.0
        assert poly_accel_fit(Trajectory(0.5 * 9.81 * t ** 2, dt=1.0 / 60.0)) == pytest.approx(9.81, rel=1e-9)

    def test_linear_ramp(self):
        t = np.arange(100) / 60.0
        assert poly_accel_fit(Trajectory(0.3 + 2.0 * t, dt=1.0 / 60.0)) == pytest.approx(0.0, abs=1e-9)

    def test_noisy_parabola(self):
        rng = np.random.default_rng(3)
        t = np.arange(300) / 60.0
        z = 0.5 * 9.81 * t ** 2 + rng.normal(0.0, 1e-3, size=t.shape)
        assert poly_accel_fit(Trajectory(z, dt=1.0 / 60.0)) == pytest.approx(9.81, rel=0.005)

    def test_too_short(self):
        with pytest.raises(TrajectoryTooShortError):
            poly_accel_fit(Trajectory(np.array([0.0, 1.0, 4.0, 9.0]), dt=1.0))


class TestLevenbergMarquardt:
    """Test the damped least-squares solver."""

    def test_exponential_fit(self):
        t = np.linspace(0.0, 4.0, 40)
        y = 2.0 * np.exp(-0.7 * t)

        def residual(x):
            return x[0] * np.exp(-x[1] * t) - y

        def jacobian(x):
            decay = np.exp(-x[1] * t)
            return np.column_stack([decay, -t * x[0] * decay])

        result = levenberg_marquardt(residual, jacobian, [1.0, 0.1])
        assert result.converged
        assert result.x == pytest.approx([2.0, 0.7], rel=1e-8)
        assert result.iterations <= 200


def noiseless(name, trials=3, max_samples=None):
    spec = preset(name).with_overrides(jitter=0.0, trial_count=trials, split_ratio=(trials, 0, 0))
    return generate(spec.capped(max_samples) if max_samples else spec, seed=0)


class TestMeasuredGroundTruth:
    """Test fitted ground-truth entries measured from clip sets."""

    def test_pendulum_damping_from_envelope(self):
        clipset = noiseless('pend_45', max_samples=3600)
        measured = {p.name: p for p in measure_ground_truth(clipset)}
        zeta = measured['zeta']
        assert zeta.measurement_type == 'fitted'
        assert zeta.value == pytest.approx(0.02, rel=0.1)
        assert zeta.extra == {'method': 'envelope', 'trials': 3}
        assert zeta.std >= 0
        assert measured['L'] == clipset.spec.ground_truth_record().get('L')

    def test_incline_friction_from_quadratic_fit(self):
        measured = {p.name: p for p in measure_ground_truth(noiseless('cone_45'))}
        assert measured['mu'].value == pytest.approx(0.2, abs=1e-4)
        assert measured['mu'].std == pytest.approx(0.0, abs=1e-4)
        assert measured['mu'].extra['method'] == 'incline_poly_accel'

    def test_entry_without_usable_trial_keeps_preset(self):
        clipset = noiseless('rotation_mid', trials=1)
        assert measure_ground_truth(clipset) == clipset.spec.ground_truth

    def test_entries_without_procedure_are_unchanged(self):
        clipset = noiseless('lab_led_2s')
        assert measure_ground_truth(clipset) == clipset.spec.ground_truth


if __name__ == '__main__':
    pytest.main([__file__, '-v', '--tb=short'])
