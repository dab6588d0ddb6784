"""
Configuration management for the physics identification toolkit
Loads environment variables and validates configuration
"""
import os
from pathlib import Path
from typing import Any, Dict, List
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

_CONFIG_DIR = Path(__file__).resolve().parent


def _int_list(raw: str) -> List[int]:
    return [int(item) for item in raw.split(',') if item.strip()]


def _str_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(',') if item.strip()]


class Settings:
    """Application settings loaded from environment variables"""

    def __init__(self):
        self._validate()

    # Reproducibility
    @property
    def seed(self) -> int:
        """Base seed for synthetic data and split assignment"""
        return int(os.getenv('PHYSID_SEED', '42'))

    # Optimizer defaults
    @property
    def epochs(self) -> int:
        return int(os.getenv('PHYSID_EPOCHS', '500'))

    @property
    def learning_rate(self) -> float:
        return float(os.getenv('PHYSID_LR', '1e-2'))

    @property
    def divergence_limit(self) -> float:
        """Largest state magnitude a rollout may reach before it counts as diverged"""
        return float(os.getenv('PHYSID_DIVERGENCE_LIMIT', '1e12'))

    # Synthetic data
    @property
    def trials(self) -> int:
        return int(os.getenv('PHYSID_TRIALS', '10'))

    @property
    def jitter(self) -> float:
        """Relative per-trial perturbation of physical constants"""
        return float(os.getenv('PHYSID_JITTER', '0.01'))

    @property
    def max_samples(self) -> int:
        """Sample cap applied by --desk-scale"""
        return int(os.getenv('PHYSID_MAX_SAMPLES', '600'))

    # Concurrency
    @property
    def workers(self) -> int:
        return int(os.getenv('PHYSID_WORKERS', '4'))

    # Sweeps
    @property
    def sweep_integrators(self) -> List[str]:
        return _str_list(os.getenv('PHYSID_SWEEP_INTEGRATORS', 'euler,verlet,rk4'))

    @property
    def sweep_horizons(self) -> List[int]:
        return _int_list(os.getenv('PHYSID_SWEEP_HORIZONS', '1,2,3,5'))

    @property
    def sweep_seeds(self) -> List[int]:
        return _int_list(os.getenv('PHYSID_SWEEP_SEEDS', '42,43,44'))

    # Paths
    @property
    def calibration_file(self) -> str:
        return os.getenv('PHYSID_CALIBRATION_FILE', str(_CONFIG_DIR / 'calibration_rules.ini'))

    @property
    def log_level(self) -> str:
        return os.getenv('LOG_LEVEL', 'INFO').upper()

    @property
    def log_dir(self) -> str:
        return os.getenv('LOG_DIR', 'logs')

    @property
    def data_dir(self) -> str:
        return os.getenv('DATA_DIR', 'data')

    @property
    def output_dir(self) -> str:
        return os.getenv('OUTPUT_DIR', 'output')

    def _validate(self) -> None:
        """Fail fast on malformed numeric settings"""
        errors = []
        checks = [
            ('PHYSID_EPOCHS', lambda: self.epochs >= 1),
            ('PHYSID_LR', lambda: self.learning_rate > 0),
            ('PHYSID_TRIALS', lambda: self.trials >= 1),
            ('PHYSID_JITTER', lambda: 0 <= self.jitter < 1),
            ('PHYSID_MAX_SAMPLES', lambda: self.max_samples >= 10),
            ('PHYSID_WORKERS', lambda: self.workers >= 1),
            ('PHYSID_DIVERGENCE_LIMIT', lambda: self.divergence_limit > 0),
            ('PHYSID_SEED', lambda: self.seed >= 0),
            ('PHYSID_SWEEP_HORIZONS', lambda: all(k >= 1 for k in self.sweep_horizons)),
            ('PHYSID_SWEEP_SEEDS', lambda: bool(self.sweep_seeds)),
        ]
        for name, check in checks:
            try:
                if not check():
                    errors.append(f"{name} is out of range")
            except ValueError:
                errors.append(f"{name} is not a valid number")

        if errors:
            raise ValueError(
                "Invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors)
            )

    def to_dict(self) -> Dict[str, Any]:
        """Resolved configuration, printed at the start of every run"""
        return {
            'seed': self.seed,
            'epochs': self.epochs,
            'learning_rate': self.learning_rate,
            'divergence_limit': self.divergence_limit,
            'trials': self.trials,
            'jitter': self.jitter,
            'max_samples': self.max_samples,
            'workers': self.workers,
            'sweep_integrators': self.sweep_integrators,
            'sweep_horizons': self.sweep_horizons,
            'sweep_seeds': self.sweep_seeds,
            'calibration_file': self.calibration_file,
            'log_level': self.log_level,
            'log_dir': self.log_dir,
            'data_dir': self.data_dir,
            'output_dir': self.output_dir,
        }


# Global settings instance
settings = Settings()
