"""
Scenario Presets Module

Clip specifications for the benchmark phenomena. Each preset fixes the
governing family, true physical constants, initial state, frame interval
and duration of one (phenomenon, setting) pair, plus the ground-truth
records written to parameters.json.

Two preset groups are registered:
  - desk-scale lab scenes sampled at 60 fps, ten trials each
  - a small lab-recording style group sampled at 20 fps, five trials each
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

from src.physics.base import (
    ClipId,
    DomainError,
    FamilyTag,
    GroundTruthParam,
    GroundTruthRecord,
    OdeFamily,
    ParamVector,
    StateVector,
    Trajectory,
    UnknownPresetError,
)

G = 9.81
FPS_60 = 1.0 / 60.0
FPS_20 = 0.05

INIT_STRATEGIES = ("default", "period", "ls")


@dataclass(frozen=True)
class ClipSpec:
    """
    Everything needed to synthesize the trials of one setting.

    Attributes:
        phenomenon: Phenomenon key (e.g. "pendulum")
        setting: Setting key within the phenomenon (e.g. "pend_45")
        family: Governing family
        true_params: Nominal physical constants
        initial: Initial state shared by all trials
        dt: Frame interval in seconds
        duration: Clip length in seconds
        noise_std: Additive Gaussian observation noise
        trial_count: Number of trials to synthesize
        jitter: Relative per-trial perturbation of the constants
        init_params: Optimizer start overriding the default start
        init_strategy: "default", "period" or "ls"
        split_ratio: (train, val, test) trial counts
        metadata: Setting constants used by calibration rules
        ground_truth: Entries of parameters.json
        units: Units label of the positions
        dataset: Preset group the spec belongs to
    """
    phenomenon: str
    setting: str
    family: OdeFamily
    true_params: ParamVector
    initial: StateVector
    dt: float
    duration: float
    noise_std: float = 0.0
    trial_count: int = 10
    jitter: float = 0.01
    init_params: Optional[ParamVector] = None
    init_strategy: str = "default"
    split_ratio: Tuple[int, int, int] = (7, 1, 2)
    metadata: Dict[str, float] = field(default_factory=dict)
    ground_truth: Tuple[GroundTruthParam, ...] = ()
    units: str = ""
    dataset: str = "desk"

    def __post_init__(self):
        if self.true_params.family != self.family:
            raise DomainError(f"{self.key}: true parameters belong to {self.true_params.family}")
        if self.init_params is not None and self.init_params.family != self.family:
            raise DomainError(f"{self.key}: init parameters belong to {self.init_params.family}")
        self.initial.check(self.family)
        if not self.dt > 0:
            raise DomainError(f"{self.key}: dt must be positive")
        if self.n_samples < 10:
            raise DomainError(f"{self.key}: duration/dt gives {self.n_samples} samples, need >= 10")
        if self.noise_std < 0:
            raise DomainError(f"{self.key}: noise_std must be >= 0")
        if self.trial_count < 1:
            raise DomainError(f"{self.key}: trial_count must be >= 1")
        if not 0 <= self.jitter < 1:
            raise DomainError(f"{self.key}: jitter must lie in [0, 1)")
        if self.init_strategy not in INIT_STRATEGIES:
            raise DomainError(f"{self.key}: unknown init strategy {self.init_strategy!r}")

    @property
    def key(self) -> str:
        return f"{self.phenomenon}/{self.setting}"

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9)) + 1

    def with_overrides(self, **changes: Any) -> 'ClipSpec':
        return replace(self, **changes)

    def capped(self, max_samples: int) -> 'ClipSpec':
        """Shorten the clip to at most max_samples frames."""
        if self.n_samples <= max_samples:
            return self
        return replace(self, duration=(max_samples - 1) * self.dt)

    def ground_truth_record(self) -> GroundTruthRecord:
        return GroundTruthRecord(self.phenomenon, self.setting, list(self.ground_truth))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'phenomenon': self.phenomenon,
            'setting': self.setting,
            'family': self.family.to_dict(),
            'true_params': list(self.true_params.values),
            'initial': {
                'positions': list(self.initial.positions),
                'velocities': list(self.initial.velocities),
            },
            'dt': self.dt,
            'duration': self.duration,
            'noise_std': self.noise_std,
            'trial_count': self.trial_count,
            'jitter': self.jitter,
            'init_params': list(self.init_params.values) if self.init_params else None,
            'init_strategy': self.init_strategy,
            'split_ratio': list(self.split_ratio),
            'metadata': dict(self.metadata),
            'units': self.units,
            'dataset': self.dataset,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], ground_truth: Tuple[GroundTruthParam, ...] = ()) -> 'ClipSpec':
        family = OdeFamily.from_dict(data['family'])
        init = data.get('init_params')
        return cls(
            phenomenon=data['phenomenon'],
            setting=data['setting'],
            family=family,
            true_params=ParamVector(family, tuple(data['true_params'])),
            initial=StateVector(
                tuple(data['initial']['positions']),
                tuple(data['initial'].get('velocities', ())),
            ),
            dt=float(data['dt']),
            duration=float(data['duration']),
            noise_std=float(data.get('noise_std', 0.0)),
            trial_count=int(data.get('trial_count', 10)),
            jitter=float(data.get('jitter', 0.01)),
            init_params=ParamVector(family, tuple(init)) if init else None,
            init_strategy=data.get('init_strategy', 'default'),
            split_ratio=tuple(data.get('split_ratio', (7, 1, 2))),
            metadata=dict(data.get('metadata', {})),
            ground_truth=tuple(ground_truth),
            units=data.get('units', ''),
            dataset=data.get('dataset', 'desk'),
        )


@dataclass
class ClipSet:
    """Synthesized trials of one setting together with their split labels"""
    spec: ClipSpec
    seed: int
    trajectories: List[Trajectory]
    splits: List[str]
    trial_params: List[ParamVector] = field(default_factory=list)

    def clip_id(self, trial: int) -> ClipId:
        return ClipId(self.spec.phenomenon, self.spec.setting, trial, self.seed)

    def trials(self, split: Optional[str] = None) -> List[int]:
        """Trial indices, optionally restricted to one split label."""
        return [i for i, label in enumerate(self.splits) if split is None or label == split]

    def __len__(self) -> int:
        return len(self.trajectories)


def _direct(name: str, value: float, units: str, std: float = 0.0) -> GroundTruthParam:
    return GroundTruthParam(name=name, value=value, units=units, measurement_type="direct", std=std)


def _fitted(name: str, value: float, units: str, std: float = 0.0) -> GroundTruthParam:
    return GroundTruthParam(name=name, value=value, units=units, measurement_type="fitted", std=std)


def _single(tag: FamilyTag) -> OdeFamily:
    return OdeFamily(tag)


def _fall_duration(height: float, accel: float) -> float:
    return math.sqrt(2.0 * height / accel)


def _dropping_ball(setting: str, h0: float, dt: float = FPS_60, trials: int = 10,
                   split=(7, 1, 2), dataset: str = "desk", phenomenon: str = "dropping_ball") -> ClipSpec:
    family = _single(FamilyTag.CONSTANT_ACCEL)
    steps = math.floor(_fall_duration(h0, G) / dt)
    return ClipSpec(
        phenomenon=phenomenon,
        setting=setting,
        family=family,
        true_params=ParamVector(family, (-G,)),
        initial=StateVector((h0,), (0.0,)),
        dt=dt,
        duration=steps * dt,
        trial_count=trials,
        init_params=ParamVector(family, (-9.81,)),
        split_ratio=split,
        metadata={'h0': h0},
        ground_truth=(
            _direct('g', G, 'm/s^2'),
            _direct('h0', h0, 'm', std=0.002),
            _direct('d_cam', 1.94, 'm', std=0.02),
        ),
        units='m',
        dataset=dataset,
    )


def _falling_ball(setting: str, r0: float, dt: float = FPS_60, duration: float = 8.0, trials: int = 10,
                  split=(7, 1, 2), dataset: str = "desk", phenomenon: str = "falling_ball") -> ClipSpec:
    family = _single(FamilyTag.FALLING_BALL_RADIUS)
    focal, h0 = 1000.0, 1.0
    return ClipSpec(
        phenomenon=phenomenon,
        setting=setting,
        family=family,
        true_params=ParamVector(family, (G, r0 * focal, h0)),
        initial=StateVector((r0 * focal / h0,)),
        dt=dt,
        duration=duration,
        trial_count=trials,
        split_ratio=split,
        metadata={'h0': h0, 'focal_px': focal},
        ground_truth=(
            _direct('g', G, 'm/s^2'),
            _direct('r0', r0, 'm', std=0.001),
            _fitted('focal_px', focal, 'px'),
            _fitted('h0', h0, 'm'),
        ),
        units='px',
        dataset=dataset,
    )


def _incline(setting: str, alpha_deg: float, length: float, mu: float, dt: float = FPS_60, trials: int = 10,
             split=(7, 1, 2), dataset: str = "desk", phenomenon: str = "sliding_cone") -> ClipSpec:
    family = _single(FamilyTag.CONSTANT_ACCEL)
    alpha = math.radians(alpha_deg)
    accel = G * (math.sin(alpha) - mu * math.cos(alpha))
    steps = math.floor(_fall_duration(length, accel) / dt)
    return ClipSpec(
        phenomenon=phenomenon,
        setting=setting,
        family=family,
        true_params=ParamVector(family, (accel,)),
        initial=StateVector((0.0,), (0.0,)),
        dt=dt,
        duration=steps * dt,
        trial_count=trials,
        # Frictionless slide from the known angle.
        init_params=ParamVector(family, (G * math.sin(alpha),)),
        split_ratio=split,
        metadata={'alpha_deg': alpha_deg, 'length': length},
        ground_truth=(
            _direct('alpha_deg', alpha_deg, 'deg', std=0.5),
            _direct('length', length, 'm', std=0.005),
            _fitted('mu', mu, '1', std=0.02),
        ),
        units='m',
        dataset=dataset,
    )


def _pendulum(setting: str, length: float, theta0_deg: float, duration: float, dt: float = FPS_60,
              zeta: float = 0.02, trials: int = 10, split=(7, 1, 2), dataset: str = "desk",
              phenomenon: str = "pendulum") -> ClipSpec:
    family = _single(FamilyTag.NONLINEAR_PENDULUM)
    return ClipSpec(
        phenomenon=phenomenon,
        setting=setting,
        family=family,
        true_params=ParamVector(family, (G / length, zeta)),
        initial=StateVector((math.radians(theta0_deg),), (0.0,)),
        dt=dt,
        duration=duration,
        trial_count=trials,
        init_strategy="period",
        split_ratio=split,
        metadata={'theta0_deg': theta0_deg, 'g_true': G},
        ground_truth=(
            _direct('L', length, 'm', std=0.002),
            _direct('theta0_deg', theta0_deg, 'deg', std=1.0),
            _fitted('zeta', zeta, '1/s', std=0.01),
        ),
        units='rad',
        dataset=dataset,
    )


def _rotation(setting: str, beta: float, theta0: float) -> ClipSpec:
    family = _single(FamilyTag.SECOND_ORDER_LINEAR)
    alpha = 0.10
    return ClipSpec(
        phenomenon="rotating_cone",
        setting=setting,
        family=family,
        true_params=ParamVector(family, (alpha, beta)),
        initial=StateVector((theta0,), (0.0,)),
        dt=FPS_60,
        duration=8.0,
        metadata={'theta0_rad': theta0},
        ground_truth=(
            _direct('alpha', alpha, '1/s^2', std=0.01),
            _fitted('beta', beta, '1/s', std=0.01),
            _direct('theta0_rad', theta0, 'rad', std=0.05),
        ),
        units='rad',
    )


def _hitting_cones() -> ClipSpec:
    bodies = 16
    family = OdeFamily(FamilyTag.COUPLED_CONTACT, bodies)
    positions = (-2.0,) + (0.0,) * (bodies - 1)
    velocities = (1.0,) + (0.0,) * (bodies - 1)
    return ClipSpec(
        phenomenon="hitting_cones",
        setting="hitting_cones",
        family=family,
        true_params=ParamVector(family, (1.0, 0.5)),
        initial=StateVector(positions, velocities),
        dt=FPS_60,
        duration=5.0,
        metadata={'d_ball_cones': 2.0},
        ground_truth=(
            _fitted('kappa', 1.0, '1/s^2', std=0.1),
            _fitted('zeta', 0.5, '1/s', std=0.05),
            _direct('d_ball_cones', 2.0, 'm', std=0.01),
            _direct('d_cam', 2.20, 'm', std=0.02),
        ),
        units='m',
    )


def _pendulum_pair(phenomenon: str, setting: str, theta0_deg: float, static: bool, duration: float) -> ClipSpec:
    family = OdeFamily(FamilyTag.COUPLED_PENDULUM, 2)
    length, zeta, kappa = 0.50, 0.02, 5.0
    theta0 = math.radians(theta0_deg)
    # Static pair: the left pendulum is released, the right one hangs at rest.
    positions = (-theta0, 0.0) if static else (theta0, -theta0)
    return ClipSpec(
        phenomenon=phenomenon,
        setting=setting,
        family=family,
        true_params=ParamVector(family, (G / length, G / length, zeta, zeta, kappa)),
        initial=StateVector(positions, (0.0, 0.0)),
        dt=FPS_60,
        duration=duration,
        init_strategy="ls",
        metadata={'theta0_deg': theta0_deg, 'g_true': G},
        ground_truth=(
            _direct('L_1', length, 'm', std=0.002),
            _direct('L_2', length, 'm', std=0.002),
            _direct('theta0_deg', theta0_deg, 'deg', std=1.0),
            _fitted('zeta_1', zeta, '1/s', std=0.01),
            _fitted('zeta_2', zeta, '1/s', std=0.01),
            _fitted('kappa_1_2', kappa, '1/s^2', std=0.5),
        ),
        units='rad',
    )


def _decay(setting: str, rate: float) -> ClipSpec:
    family = _single(FamilyTag.FIRST_ORDER_DECAY)
    return ClipSpec(
        phenomenon="led",
        setting=setting,
        family=family,
        true_params=ParamVector(family, (rate,)),
        initial=StateVector((1.0,)),
        dt=FPS_20,
        duration=2.0,
        trial_count=5,
        split_ratio=(3, 1, 1),
        ground_truth=(_fitted('lambda', rate, '1/s', std=0.05),),
        units='1',
        dataset='lab',
    )


def _torricelli(setting: str, k: float) -> ClipSpec:
    family = _single(FamilyTag.TORRICELLI)
    return ClipSpec(
        phenomenon="torricelli",
        setting=setting,
        family=family,
        true_params=ParamVector(family, (k,)),
        initial=StateVector((1.0,)),
        dt=FPS_20,
        duration=20.0,
        trial_count=5,
        split_ratio=(3, 1, 1),
        ground_truth=(_fitted('k', k, 'm^0.5/s', std=0.001),),
        units='m',
        dataset='lab',
    )


_LAB = dict(dt=FPS_20, trials=5, split=(3, 1, 1), dataset='lab')

_BUILDERS: Dict[str, Callable[[], ClipSpec]] = {
    'drop_50': lambda: _dropping_ball('drop_50', 0.50),
    'drop_100': lambda: _dropping_ball('drop_100', 1.00),
    'drop_150': lambda: _dropping_ball('drop_150', 1.50),
    'falling_big': lambda: _falling_ball('falling_big', 0.11),
    'falling_mid': lambda: _falling_ball('falling_mid', 0.07),
    'falling_small': lambda: _falling_ball('falling_small', 0.04),
    'cone_45': lambda: _incline('cone_45', 45.0, 0.77, 0.2),
    'cone_60': lambda: _incline('cone_60', 60.0, 0.84, 0.2),
    'cone_80': lambda: _incline('cone_80', 80.0, 0.80, 0.2),
    'pend_20': lambda: _pendulum('pend_20', 0.50, 20.0, 150.0),
    'pend_45': lambda: _pendulum('pend_45', 0.50, 45.0, 150.0),
    'pend_90': lambda: _pendulum('pend_90', 0.50, 90.0, 150.0),
    'rotation_slow': lambda: _rotation('rotation_slow', 0.03, math.pi),
    'rotation_mid': lambda: _rotation('rotation_mid', 0.05, 2 * math.pi),
    'rotation_fast': lambda: _rotation('rotation_fast', 0.08, 4 * math.pi),
    'hitting_cones': _hitting_cones,
    'two_pend_20': lambda: _pendulum_pair('two_moving_pendulums', 'two_pend_20', 20.0, False, 6.0),
    'two_pend_45': lambda: _pendulum_pair('two_moving_pendulums', 'two_pend_45', 45.0, False, 6.0),
    'two_pend_90': lambda: _pendulum_pair('two_moving_pendulums', 'two_pend_90', 90.0, False, 6.0),
    'one_static_20': lambda: _pendulum_pair('one_static_pendulum', 'one_static_20', 20.0, True, 20.0),
    'one_static_45': lambda: _pendulum_pair('one_static_pendulum', 'one_static_45', 45.0, True, 20.0),
    'one_static_90': lambda: _pendulum_pair('one_static_pendulum', 'one_static_90', 90.0, True, 20.0),
    'lab_dropped_ball_large': lambda: _dropping_ball(
        'lab_dropped_ball_large', 1.50, phenomenon='dropped_ball', **_LAB),
    'lab_free_fall_mousepad': lambda: _falling_ball(
        'lab_free_fall_mousepad', 0.03, duration=2.0, phenomenon='free_fall', **_LAB),
    'lab_led_2s': lambda: _decay('lab_led_2s', 2.30),
    'lab_pendulum_45': lambda: _pendulum(
        'lab_pendulum_45', 0.45, 20.0, 10.0, zeta=0.02, dt=FPS_20, trials=5, split=(3, 1, 1), dataset='lab'),
    'lab_pendulum_90': lambda: _pendulum(
        'lab_pendulum_90', 0.90, 20.0, 10.0, zeta=0.02, dt=FPS_20, trials=5, split=(3, 1, 1), dataset='lab'),
    'lab_pendulum_150': lambda: _pendulum(
        'lab_pendulum_150', 1.50, 20.0, 10.0, zeta=0.02, dt=FPS_20, trials=5, split=(3, 1, 1), dataset='lab'),
    'lab_sliding_block_mid': lambda: _incline(
        'lab_sliding_block_mid', 30.0, 1.0, 0.21, phenomenon='sliding_block', **_LAB),
    'lab_torricelli_large': lambda: _torricelli('lab_torricelli_large', 0.016),
    'lab_torricelli_small': lambda: _torricelli('lab_torricelli_small', 0.010),
}

DESK_PRESETS: Tuple[str, ...] = tuple(name for name in _BUILDERS if not name.startswith('lab_'))
LAB_PRESETS: Tuple[str, ...] = tuple(name for name in _BUILDERS if name.startswith('lab_'))


def get_preset(name: str) -> ClipSpec:
    """
    Look up a registered preset.

    Raises:
        UnknownPresetError: If name is not registered
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {name!r}; known: {', '.join(sorted(_BUILDERS))}") from None
    return builder()


def list_presets(dataset: Optional[str] = None) -> List[str]:
    """Preset names in registration order, optionally filtered by group."""
    if dataset is None:
        return list(_BUILDERS)
    if dataset == 'desk':
        return list(DESK_PRESETS)
    if dataset == 'lab':
        return list(LAB_PRESETS)
    raise UnknownPresetError(f"unknown preset group {dataset!r}")
