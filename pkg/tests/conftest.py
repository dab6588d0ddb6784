"""
Shared fixtures for the physid test suite.
"""

import math

import numpy as np
import pytest

from src.data.presets import ClipSpec
from src.physics.base import (
    FamilyTag,
    OdeFamily,
    ParamVector,
    StateVector,
    Trajectory,
)
from src.physics.integrators import integrate


def make_spec(family, params, initial, dt, duration, **overrides) -> ClipSpec:
    """Single-trial, jitter-free clip spec for round-trip tests."""
    values = dict(
        phenomenon='test',
        setting=f"{family.tag.value}_case",
        family=family,
        true_params=ParamVector(family, tuple(params)),
        initial=initial,
        dt=dt,
        duration=duration,
        trial_count=1,
        jitter=0.0,
        split_ratio=(1, 0, 0),
    )
    values.update(overrides)
    return ClipSpec(**values)


def stepper_trajectory(kind, family, params, initial, dt, steps) -> Trajectory:
    """Trajectory produced by the discrete stepper itself."""
    y0 = StateVector(*initial).to_flat()[None, :]
    states = integrate(kind, family, np.asarray(params, dtype=float), y0, dt, steps)
    return Trajectory(states[:, 0, :family.body_count], dt=dt)


@pytest.fixture
def sol():
    return OdeFamily(FamilyTag.SECOND_ORDER_LINEAR)


@pytest.fixture
def pendulum():
    return OdeFamily(FamilyTag.NONLINEAR_PENDULUM)


@pytest.fixture
def decay():
    return OdeFamily(FamilyTag.FIRST_ORDER_DECAY)


@pytest.fixture
def torricelli():
    return OdeFamily(FamilyTag.TORRICELLI)


@pytest.fixture
def accel():
    return OdeFamily(FamilyTag.CONSTANT_ACCEL)


@pytest.fixture
def coupled_pendulum():
    return OdeFamily(FamilyTag.COUPLED_PENDULUM, 2)


@pytest.fixture
def oscillator_clip(sol):
    """Undamped unit oscillator, z0=1, sampled at 100 Hz for 10 s."""
    dt = 0.01
    t = dt * np.arange(1001)
    return Trajectory(np.cos(t), dt=dt)


@pytest.fixture
def damped_oscillator(sol):
    """Analytic damped oscillator with alpha=1, beta=0.1 at 60 fps over 20 s."""
    alpha, beta, dt = 1.0, 0.1, 1.0 / 60.0
    t = dt * np.arange(1201)
    omega = math.sqrt(alpha - beta ** 2 / 4.0)
    z = np.exp(-0.5 * beta * t) * (np.cos(omega * t) + beta / (2.0 * omega) * np.sin(omega * t))
    return Trajectory(z, dt=dt)


@pytest.fixture
def quiet_logging(mocker):
    """Keep CLI runs from reconfiguring the root logger."""
    return mocker.patch('main.setup_from_config')


@pytest.fixture
def isolated_env(monkeypatch, tmp_path):
    """Point every configurable path at tmp_path."""
    monkeypatch.setenv('DATA_DIR', str(tmp_path / 'data'))
    monkeypatch.setenv('OUTPUT_DIR', str(tmp_path / 'output'))
    monkeypatch.setenv('LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.setenv('PHYSID_WORKERS', '2')
    return tmp_path


