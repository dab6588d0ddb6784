"""
Physics Identification Base Module

Defines the shared domain types (ODE families, parameter vectors, states,
trajectories, integrator kinds, ground-truth records) and the exception
hierarchy used across the toolkit.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np


class PhysIdError(Exception):
    """Base exception for physics-identification errors"""
    pass


class ArityMismatchError(PhysIdError):
    """Raised when a parameter vector does not match its family's arity"""
    pass


class StateShapeError(PhysIdError):
    """Raised when a state does not match the family's body count"""
    pass


class UnsupportedFamilyError(PhysIdError):
    """Raised when an operation is not defined for the requested family"""
    pass


class IntegratorMismatchError(PhysIdError):
    """Raised when an integrator kind cannot be used with a family"""
    pass


class DivergenceError(PhysIdError):
    """Raised when a rollout leaves the finite / bounded region"""

    def __init__(self, message: str, step_index: int, trial_index: Optional[int] = None):
        super().__init__(message)
        self.step_index = step_index
        self.trial_index = trial_index


class TrajectoryTooShortError(PhysIdError):
    """Raised when a trajectory has too few samples for an operation"""
    pass


class IllPosedFitError(PhysIdError):
    """Raised when a regression is rank deficient"""
    pass


class InsufficientPeaksError(PhysIdError):
    """Raised when a signal has too few oscillation peaks or crossings"""
    pass


class DomainError(PhysIdError):
    """Raised when a physical argument is outside its valid range"""
    pass


class CalibrationError(PhysIdError):
    """Raised when a latent-to-SI conversion is undefined"""
    pass


class UnknownPresetError(PhysIdError):
    """Raised when a preset name is not registered"""
    pass


class SchemaError(PhysIdError):
    """Raised when a file does not follow its declared format"""
    pass


class SplitError(PhysIdError):
    """Raised when a split manifest cannot be built"""
    pass


class LabelError(PhysIdError):
    """Raised for inconsistent or unknown classification labels"""
    pass


class FamilyTag(Enum):
    """Governing-equation families of the ODE bank"""
    SECOND_ORDER_LINEAR = "second_order_linear"
    FIRST_ORDER_DECAY = "first_order_decay"
    TORRICELLI = "torricelli"
    CONSTANT_ACCEL = "constant_accel"
    NONLINEAR_PENDULUM = "nonlinear_pendulum"
    COUPLED_PENDULUM = "coupled_pendulum"
    COUPLED_CONTACT = "coupled_contact"
    # Algebraic apparent-radius model; has a closed form but no rhs.
    FALLING_BALL_RADIUS = "falling_ball_radius"


COUPLED_TAGS = frozenset({FamilyTag.COUPLED_PENDULUM, FamilyTag.COUPLED_CONTACT})
FIRST_ORDER_TAGS = frozenset({FamilyTag.FIRST_ORDER_DECAY, FamilyTag.TORRICELLI})


def pair_indices(body_count: int) -> List[Tuple[int, int]]:
    """Upper-triangle body pairs (i < j) in row-major order."""
    return [(i, j) for i in range(body_count) for j in range(i + 1, body_count)]


@dataclass(frozen=True)
class OdeFamily:
    """
    One governing-equation family of the bank.

    Attributes:
        tag: Family identifier
        body_count: 1 for single-body families, N >= 2 for coupled ones
        contact_threshold: Optional gate; when set, a coupling pair is only
            active while |z_i - z_j| < threshold
    """
    tag: FamilyTag
    body_count: int = 1
    contact_threshold: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.tag, str):
            object.__setattr__(self, 'tag', FamilyTag(self.tag))
        if self.tag in COUPLED_TAGS:
            if self.body_count < 2:
                raise StateShapeError(f"{self.tag.value} needs body_count >= 2, got {self.body_count}")
        elif self.body_count != 1:
            raise StateShapeError(f"{self.tag.value} is single-body, got body_count={self.body_count}")
        if self.contact_threshold is not None:
            if self.tag not in COUPLED_TAGS:
                raise UnsupportedFamilyError("contact gate only applies to coupled families")
            if self.contact_threshold <= 0:
                raise DomainError("contact_threshold must be positive")

    @property
    def is_first_order(self) -> bool:
        return self.tag in FIRST_ORDER_TAGS

    @property
    def is_algebraic(self) -> bool:
        return self.tag is FamilyTag.FALLING_BALL_RADIUS

    @property
    def is_coupled(self) -> bool:
        return self.tag in COUPLED_TAGS

    @property
    def state_dim(self) -> int:
        """Length of the flat state (positions, then velocities)."""
        if self.is_first_order or self.is_algebraic:
            return self.body_count
        return 2 * self.body_count

    @property
    def arity(self) -> int:
        n = self.body_count
        return {
            FamilyTag.SECOND_ORDER_LINEAR: 2,
            FamilyTag.FIRST_ORDER_DECAY: 1,
            FamilyTag.TORRICELLI: 1,
            FamilyTag.CONSTANT_ACCEL: 1,
            FamilyTag.NONLINEAR_PENDULUM: 2,
            FamilyTag.COUPLED_PENDULUM: 2 * n + n * (n - 1) // 2,
            FamilyTag.COUPLED_CONTACT: 2,
            FamilyTag.FALLING_BALL_RADIUS: 3,
        }[self.tag]

    @property
    def param_names(self) -> Tuple[str, ...]:
        """Canonical parameter order; used by every serializer."""
        if self.tag is FamilyTag.COUPLED_PENDULUM:
            n = self.body_count
            names = [f"g_over_L_{i + 1}" for i in range(n)]
            names += [f"zeta_{i + 1}" for i in range(n)]
            names += [f"kappa_{i + 1}_{j + 1}" for i, j in pair_indices(n)]
            return tuple(names)
        return {
            FamilyTag.SECOND_ORDER_LINEAR: ("alpha", "beta"),
            FamilyTag.FIRST_ORDER_DECAY: ("lambda",),
            FamilyTag.TORRICELLI: ("k",),
            FamilyTag.CONSTANT_ACCEL: ("a",),
            FamilyTag.NONLINEAR_PENDULUM: ("g_over_L", "zeta"),
            FamilyTag.COUPLED_CONTACT: ("kappa", "zeta"),
            FamilyTag.FALLING_BALL_RADIUS: ("g", "r0_f", "h0"),
        }[self.tag]

    @property
    def nonnegative_indices(self) -> Tuple[int, ...]:
        """Parameter slots constrained to be >= 0."""
        if self.tag in FIRST_ORDER_TAGS:
            return (0,)
        return ()

    @classmethod
    def parse(cls, value: str, body_count: int = 1) -> 'OdeFamily':
        return cls(FamilyTag(value), body_count)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tag': self.tag.value,
            'body_count': self.body_count,
            'contact_threshold': self.contact_threshold,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'OdeFamily':
        return cls(FamilyTag(data['tag']), int(data.get('body_count', 1)), data.get('contact_threshold'))

    def __str__(self) -> str:
        if self.body_count > 1:
            return f"{self.tag.value}[{self.body_count}]"
        return self.tag.value


@dataclass(frozen=True)
class ParamVector:
    """Parameter vector gamma of a family, in canonical order."""
    family: OdeFamily
    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in np.asarray(self.values, dtype=float).ravel())
        object.__setattr__(self, 'values', values)
        if len(values) != self.family.arity:
            raise ArityMismatchError(
                f"{self.family} expects {self.family.arity} parameters, got {len(values)}"
            )
        for index in self.family.nonnegative_indices:
            if values[index] < 0:
                name = self.family.param_names[index]
                raise DomainError(f"{self.family}: {name} must be >= 0, got {values[index]}")

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.family.param_names, self.values))

    def replace(self, values: Sequence[float]) -> 'ParamVector':
        return ParamVector(self.family, tuple(values))

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.as_dict()[key]
        return self.values[key]

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class StateVector:
    """Latent state: per-body positions and (for second-order families) velocities."""
    positions: Tuple[float, ...]
    velocities: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'positions', tuple(float(v) for v in np.ravel(self.positions)))
        object.__setattr__(self, 'velocities', tuple(float(v) for v in np.ravel(self.velocities)))
        if self.velocities and len(self.velocities) != len(self.positions):
            raise StateShapeError(
                f"positions ({len(self.positions)}) and velocities ({len(self.velocities)}) differ in length"
            )

    @property
    def body_count(self) -> int:
        return len(self.positions)

    def to_flat(self) -> np.ndarray:
        return np.array(self.positions + self.velocities, dtype=float)

    @classmethod
    def from_flat(cls, family: OdeFamily, flat: np.ndarray) -> 'StateVector':
        n = family.body_count
        flat = np.asarray(flat, dtype=float)
        if family.state_dim == n:
            return cls(tuple(flat[:n]), ())
        return cls(tuple(flat[:n]), tuple(flat[n:2 * n]))

    def check(self, family: OdeFamily) -> None:
        """Validate this state against a family."""
        if self.body_count != family.body_count:
            raise StateShapeError(
                f"{family} expects {family.body_count} bodies, state has {self.body_count}"
            )
        if family.is_first_order or family.is_algebraic:
            if self.velocities:
                raise StateShapeError(f"{family} carries no velocities")
        elif len(self.velocities) != self.body_count:
            raise StateShapeError(f"{family} needs one velocity per body")


class IntegratorKind(Enum):
    """Discrete-time steppers; values are the command-line spellings"""
    EULER_UNCORRECTED = "euler-buggy"
    EULER_CORRECTED = "euler"
    STORMER_VERLET = "verlet"
    RK4 = "rk4"


@dataclass(eq=False)
class Trajectory:
    """
    Uniformly sampled observed positions.

    Attributes:
        positions: Array of shape (T, N), one column per body
        dt: Sampling interval in seconds
        t0: Time of the first sample
        units: Free-form units label for the positions
    """
    positions: np.ndarray
    dt: float
    t0: float = 0.0
    units: str = ""

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim == 1:
            positions = positions[:, None]
        if positions.ndim != 2 or positions.shape[0] == 0:
            raise StateShapeError(f"positions must be (T, N), got shape {positions.shape}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        self.positions = positions

    @property
    def n_samples(self) -> int:
        return self.positions.shape[0]

    @property
    def body_count(self) -> int:
        return self.positions.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def body(self, index: int) -> 'Trajectory':
        return Trajectory(self.positions[:, index:index + 1], self.dt, self.t0, self.units)

    def head(self, n_samples: int) -> 'Trajectory':
        return Trajectory(self.positions[:n_samples], self.dt, self.t0, self.units)

    def relabel(self, dt: float) -> 'Trajectory':
        """Same samples under a different (possibly wrong) frame interval."""
        return Trajectory(self.positions, dt, self.t0, self.units)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.t0 == other.t0
            and self.positions.shape == other.positions.shape
            and bool(np.array_equal(self.positions, other.positions))
        )


@dataclass(frozen=True)
class ClipId:
    """Traceability tuple attached to every fit and results row"""
    phenomenon: str
    setting: str
    trial: int
    seed: int

    def as_tuple(self) -> Tuple[str, str, int, int]:
        return (self.phenomenon, self.setting, self.trial, self.seed)

    def __str__(self) -> str:
        return f"{self.phenomenon}/{self.setting}#{self.trial}@{self.seed}"


MEASUREMENT_TYPES = ("direct", "fitted")


@dataclass
class GroundTruthParam:
    """One ground-truth entry of parameters.json"""
    name: str
    value: float
    units: str
    measurement_type: str
    std: float = 0.0
    min: Optional[float] = None
    max: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'name': self.name,
            'value': self.value,
            'std': self.std,
            'min': self.min,
            'max': self.max,
            'units': self.units,
            'measurement_type': self.measurement_type,
        }
        data.update(self.extra)
        return data


@dataclass
class GroundTruthRecord:
    """Ground truth of one (phenomenon, setting)"""
    phenomenon: str
    setting: str
    params: List[GroundTruthParam]
    extra: Dict[str, Any] = field(default_factory=dict)

    def get(self, name: str) -> Optional[GroundTruthParam]:
        for param in self.params:
            if param.name == name:
                return param
        return None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'phenomenon': self.phenomenon,
            'setting': self.setting,
            'params': [p.to_dict() for p in self.params],
        }
        data.update(self.extra)
        return data
