"""
Data IO Module

File formats of the toolkit:
  - trajectory CSV (header t,body,pos), one row per (frame, body)
  - parameters.json ground-truth records
  - split manifest CSV (phenomenon, setting, trial, split)
  - results CSV, one row per (clip, parameter)
  - clip directories holding all trials of one setting

Every write goes through a temp file in the target directory followed by
os.replace, so readers never observe partial files. Floats are written with
9 significant digits.
"""

import json
import math
import os
import tempfile
import threading
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.physics.base import (
    GroundTruthParam,
    GroundTruthRecord,
    MEASUREMENT_TYPES,
    ParamVector,
    SchemaError,
    SplitError,
    Trajectory,
)
from src.data.presets import ClipSet, ClipSpec
from src.utils import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = '%.9g'
TRAJECTORY_COLUMNS = ['t', 'body', 'pos']
MANIFEST_COLUMNS = ['phenomenon', 'setting', 'trial', 'split']
SPLIT_LABELS = ('train', 'val', 'test', 'leaderboard')
DEFAULT_SPLIT_RATIO = (7, 1, 2)

PathLike = Union[str, Path]


def quantize(values: Any) -> np.ndarray:
    """Round to the precision the CSV writer keeps (9 significant digits)."""
    arr = np.asarray(values, dtype=float)
    flat = [float(FLOAT_FORMAT % v) for v in arr.ravel()]
    return np.array(flat, dtype=float).reshape(arr.shape)


def _atomic_write(path: PathLike, writer) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix='.tmp', dir=target.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            writer(handle)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write text to path atomically."""
    return _atomic_write(path, lambda handle: handle.write(text))


def atomic_write_json(path: PathLike, data: Any) -> Path:
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=False) + "\n")


def atomic_write_frame(path: PathLike, frame: pd.DataFrame) -> Path:
    """Write a DataFrame as CSV atomically with the shared float format."""
    return _atomic_write(
        path, lambda handle: frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, na_rep='')
    )


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------

def trajectory_to_frame(traj: Trajectory) -> pd.DataFrame:
    n_samples, bodies = traj.positions.shape
    return pd.DataFrame({
        't': np.repeat(traj.times, bodies),
        'body': np.tile(np.arange(bodies), n_samples),
        'pos': traj.positions.ravel(),
    })


def write_trajectory_csv(traj: Trajectory, path: PathLike) -> Path:
    return atomic_write_frame(path, trajectory_to_frame(traj))


def load_trajectory_csv(path: PathLike, units: str = "") -> Trajectory:
    """
    Load a trajectory CSV.

    Raises:
        SchemaError: On a bad header, unsorted or incomplete rows, or
            non-uniform timestamps
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f"{path}: unreadable CSV ({e})") from e

    if list(frame.columns) != TRAJECTORY_COLUMNS:
        raise SchemaError(f"{path}: header must be {','.join(TRAJECTORY_COLUMNS)}, got {','.join(frame.columns)}")
    if frame.empty:
        raise SchemaError(f"{path}: no samples")
    if frame.isna().any().any():
        bad = int(np.argmax(frame.isna().any(axis=1).to_numpy()))
        raise SchemaError(f"{path}:{bad + 2}: missing value")

    bodies = int(frame['body'].max()) + 1
    if len(frame) % bodies:
        raise SchemaError(f"{path}: {len(frame)} rows do not divide into {bodies} bodies")
    expected_body = np.tile(np.arange(bodies), len(frame) // bodies)
    mismatch = np.nonzero(frame['body'].to_numpy() != expected_body)[0]
    if mismatch.size:
        raise SchemaError(f"{path}:{mismatch[0] + 2}: rows must be sorted by t then body")

    times = frame['t'].to_numpy(dtype=float).reshape(-1, bodies)
    if np.any(times != times[:, :1]):
        row = int(np.argmax(np.any(times != times[:, :1], axis=1)))
        raise SchemaError(f"{path}:{row * bodies + 2}: bodies of one frame carry different t")
    stamps = times[:, 0]
    if len(stamps) < 2:
        raise SchemaError(f"{path}: need at least 2 frames to infer dt")
    if np.any(np.diff(stamps) <= 0):
        raise SchemaError(f"{path}: timestamps must increase")

    dt = float(FLOAT_FORMAT % ((stamps[-1] - stamps[0]) / (len(stamps) - 1)))
    t0 = float(stamps[0])
    grid = t0 + dt * np.arange(len(stamps))
    # 9 significant digits leave up to 5e-9 relative error per stamp.
    tolerance = 1e-8 * np.maximum(np.abs(stamps), dt)
    off = np.nonzero(np.abs(stamps - grid) > tolerance)[0]
    if off.size:
        raise SchemaError(f"{path}:{off[0] * bodies + 2}: timestamps are not uniformly spaced")

    positions = frame['pos'].to_numpy(dtype=float).reshape(-1, bodies)
    return Trajectory(positions=positions, dt=dt, t0=t0, units=units)


# ---------------------------------------------------------------------------
# parameters.json
# ---------------------------------------------------------------------------

_PARAM_KEYS = ('name', 'value', 'std', 'min', 'max', 'units', 'measurement_type')
_RECORD_KEYS = ('phenomenon', 'setting', 'params')


def _parse_param(raw: Dict[str, Any], where: str) -> GroundTruthParam:
    for key in ('name', 'value', 'units', 'measurement_type'):
        if key not in raw:
            raise SchemaError(f"{where}: missing field {key!r}")
    if raw['measurement_type'] not in MEASUREMENT_TYPES:
        raise SchemaError(f"{where}: measurement_type must be one of {MEASUREMENT_TYPES}")
    value = float(raw['value'])
    std = float(raw.get('std') or 0.0)
    if std < 0:
        raise SchemaError(f"{where}: std must be >= 0")
    lo, hi = raw.get('min'), raw.get('max')
    if lo is not None and value < float(lo):
        raise SchemaError(f"{where}: value {value} below min {lo}")
    if hi is not None and value > float(hi):
        raise SchemaError(f"{where}: value {value} above max {hi}")
    return GroundTruthParam(
        name=str(raw['name']),
        value=value,
        units=str(raw['units']),
        measurement_type=raw['measurement_type'],
        std=std,
        min=None if lo is None else float(lo),
        max=None if hi is None else float(hi),
        extra={k: v for k, v in raw.items() if k not in _PARAM_KEYS},
    )


def parse_ground_truth(text: str, source: str = "<string>") -> List[GroundTruthRecord]:
    """
    Parse parameters.json content.

    Unknown fields are kept in the records' extra dicts so a rewrite
    round-trips them.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{source}:{e.lineno}: {e.msg}") from e
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise SchemaError(f"{source}: expected a list of records")

    records = []
    for index, raw in enumerate(data):
        where = f"{source}: record {index}"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: expected an object")
        for key in _RECORD_KEYS:
            if key not in raw:
                raise SchemaError(f"{where}: missing field {key!r}")
        params = [
            _parse_param(p, f"{where} param {j}") for j, p in enumerate(raw['params'])
        ]
        records.append(GroundTruthRecord(
            phenomenon=str(raw['phenomenon']),
            setting=str(raw['setting']),
            params=params,
            extra={k: v for k, v in raw.items() if k not in _RECORD_KEYS},
        ))
    return records


def load_ground_truth(path: PathLike) -> List[GroundTruthRecord]:
    path = Path(path)
    return parse_ground_truth(path.read_text(encoding='utf-8'), str(path))


load_parameters_json = load_ground_truth


def write_ground_truth(records: Sequence[GroundTruthRecord], path: PathLike) -> Path:
    return atomic_write_json(path, [record.to_dict() for record in records])


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def stable_key(*parts: Any) -> int:
    return zlib.crc32("/".join(str(p) for p in parts).encode('utf-8'))


def assign_splits(
    phenomenon: str,
    setting: str,
    n_trials: int,
    seed: int,
    ratio: Optional[Sequence[int]] = None,
) -> List[str]:
    """
    Split label of each trial; a pure function of its arguments.

    Raises:
        SplitError: If the ratio does not add up to n_trials; the default
            7/1/2 ratio only applies to ten trials
    """
    ratio = tuple(ratio) if ratio is not None else DEFAULT_SPLIT_RATIO
    if len(ratio) != 3 or any(r < 0 for r in ratio):
        raise SplitError(f"{phenomenon}/{setting}: ratio must be three non-negative counts, got {ratio}")
    if sum(ratio) != n_trials:
        raise SplitError(
            f"{phenomenon}/{setting}: {n_trials} trials cannot follow the {'/'.join(map(str, ratio))} split"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, stable_key(phenomenon, setting)]))
    order = rng.permutation(n_trials)
    labels = [''] * n_trials
    cut_train, cut_val = ratio[0], ratio[0] + ratio[1]
    for rank, trial in enumerate(order):
        labels[trial] = 'train' if rank < cut_train else ('val' if rank < cut_val else 'test')
    return labels


def split_manifest(
    settings: Iterable[Tuple[str, str, int]],
    seed: int,
    ratios: Optional[Dict[Tuple[str, str], Sequence[int]]] = None,
) -> pd.DataFrame:
    """
    Build the split manifest for (phenomenon, setting, trial_count) entries.

    Args:
        settings: Entries to include
        seed: Split seed
        ratios: Per-setting ratio overrides (e.g. 3/1/1 for five trials)
    """
    ratios = ratios or {}
    rows = []
    for phenomenon, setting, n_trials in settings:
        labels = assign_splits(phenomenon, setting, n_trials, seed, ratios.get((phenomenon, setting)))
        rows.extend(
            {'phenomenon': phenomenon, 'setting': setting, 'trial': trial, 'split': label}
            for trial, label in enumerate(labels)
        )
    frame = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    return frame.sort_values(['phenomenon', 'setting', 'trial'], kind='mergesort').reset_index(drop=True)


def write_split_manifest(frame: pd.DataFrame, path: PathLike) -> Path:
    return atomic_write_frame(path, frame[MANIFEST_COLUMNS])


def load_split_manifest(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    frame = pd.read_csv(path)
    if list(frame.columns) != MANIFEST_COLUMNS:
        raise SchemaError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
    unknown = ~frame['split'].isin(SPLIT_LABELS)
    if unknown.any():
        row = int(np.argmax(unknown.to_numpy()))
        raise SchemaError(f"{path}:{row + 2}: unknown split label {frame['split'].iloc[row]!r}")
    if frame.duplicated(['phenomenon', 'setting', 'trial']).any():
        raise SchemaError(f"{path}: a trial is listed twice")
    return frame


# ---------------------------------------------------------------------------
# Results CSV
# ---------------------------------------------------------------------------

RESULTS_COLUMNS = [
    'phenomenon', 'setting', 'clip', 'seed', 'family', 'integrator', 'loss_kind', 'horizon',
    'param_name', 'gt', 'estimate', 'abs_error', 'ode_residual', 'diverged',
]
# Appended after the declared columns; consumed by evaluation and reports.
EXTRA_RESULTS_COLUMNS = [
    'split', 'param_kind', 'epochs_run', 'final_loss',
    'grad_norm_e1', 'grad_norm_e50', 'grad_norm_e200',
    'extrap_e10', 'extrap_e25', 'extrap_e50',
]
ALL_RESULTS_COLUMNS = RESULTS_COLUMNS + EXTRA_RESULTS_COLUMNS
_SORT_COLUMNS = [
    'phenomenon', 'setting', 'clip', 'seed', 'family', 'integrator', 'loss_kind', 'horizon',
    'param_kind', 'param_name',
]


@dataclass
class ResultsRow:
    """One (clip, parameter) outcome of a fit"""
    phenomenon: str
    setting: str
    clip: int
    seed: int
    family: str
    integrator: str
    loss_kind: str
    horizon: int
    param_name: str
    gt: Optional[float]
    estimate: float
    abs_error: Optional[float] = None
    ode_residual: float = math.nan
    diverged: bool = False
    split: str = ''
    param_kind: str = 'latent'
    epochs_run: int = 0
    final_loss: float = math.nan
    grad_norm_e1: float = math.nan
    grad_norm_e50: float = math.nan
    grad_norm_e200: float = math.nan
    extrap_e10: float = math.nan
    extrap_e25: float = math.nan
    extrap_e50: float = math.nan

    def __post_init__(self):
        if self.gt is not None and math.isnan(self.gt):
            self.gt = None
        if self.gt is None:
            self.abs_error = None
        else:
            self.abs_error = abs(self.estimate - self.gt)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def results_to_frame(rows: Iterable[ResultsRow]) -> pd.DataFrame:
    """Rows in canonical order with the declared columns first."""
    frame = pd.DataFrame([row.to_dict() for row in rows], columns=ALL_RESULTS_COLUMNS)
    if frame.empty:
        return frame
    frame = frame.sort_values(_SORT_COLUMNS, kind='mergesort').reset_index(drop=True)
    return frame


def write_results_csv(rows: Iterable[ResultsRow], path: PathLike) -> Path:
    return atomic_write_frame(path, results_to_frame(rows))


def load_results_csv(path: PathLike) -> pd.DataFrame:
    """
    Load a results CSV, checking the declared columns come first.

    Raises:
        SchemaError: On missing or reordered columns
    """
    path = Path(path)
    frame = pd.read_csv(path, keep_default_na=True, float_precision='round_trip')
    if list(frame.columns[:len(RESULTS_COLUMNS)]) != RESULTS_COLUMNS:
        raise SchemaError(f"{path}: results columns must start with {','.join(RESULTS_COLUMNS)}")
    for column in EXTRA_RESULTS_COLUMNS:
        if column not in frame.columns:
            frame[column] = math.nan
    frame['split'] = frame['split'].fillna('')
    frame['diverged'] = frame['diverged'].astype(str).str.lower().isin(('true', '1'))
    return frame


def rows_from_frame(frame: pd.DataFrame) -> List[ResultsRow]:
    names = [f.name for f in fields(ResultsRow)]
    rows = []
    for record in frame.to_dict(orient='records'):
        data = {k: record.get(k) for k in names}
        data['gt'] = None if pd.isna(data['gt']) else float(data['gt'])
        data['split'] = data['split'] if isinstance(data['split'], str) else ''
        rows.append(ResultsRow(**data))
    return rows


class ResultsWriter:
    """
    Collects rows from concurrent fits and writes them once, sorted.

    Output is independent of the order in which fits finish.
    """

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self._rows: List[ResultsRow] = []
        self._lock = threading.Lock()

    def add(self, rows: Iterable[ResultsRow]) -> None:
        with self._lock:
            self._rows.extend(rows)

    @property
    def rows(self) -> List[ResultsRow]:
        with self._lock:
            return list(self._rows)

    def flush(self) -> Path:
        with self._lock:
            path = write_results_csv(self._rows, self.path)
            logger.info(f"Wrote {len(self._rows)} result rows to {path}")
            return path


# ---------------------------------------------------------------------------
# Clip directories
# ---------------------------------------------------------------------------

SPEC_FILE = 'spec.json'
GROUND_TRUTH_FILE = 'parameters.json'
MANIFEST_FILE = 'splits.csv'


def clip_dir(root: PathLike, phenomenon: str, setting: str) -> Path:
    return Path(root) / phenomenon / setting


def trial_file(trial: int) -> str:
    return f"trial_{trial:03d}.csv"


def write_clipset(clipset: ClipSet, root: PathLike) -> Path:
    """
    Write all trials of a setting plus its spec and ground truth.

    Layout: <root>/<phenomenon>/<setting>/{trial_NNN.csv, spec.json, parameters.json}
    """
    spec = clipset.spec
    target = clip_dir(root, spec.phenomenon, spec.setting)
    for trial, traj in enumerate(clipset.trajectories):
        write_trajectory_csv(traj, target / trial_file(trial))
    spec_data = spec.to_dict()
    spec_data['seed'] = clipset.seed
    spec_data['splits'] = list(clipset.splits)
    spec_data['trial_params'] = [list(p.values) for p in clipset.trial_params]
    atomic_write_json(target / SPEC_FILE, spec_data)
    write_ground_truth([spec.ground_truth_record()], target / GROUND_TRUTH_FILE)
    logger.debug(f"Wrote {len(clipset)} trials of {spec.key} to {target}")
    return target


def read_clipset(directory: PathLike) -> ClipSet:
    """Load a setting directory written by write_clipset."""
    directory = Path(directory)
    spec_path = directory / SPEC_FILE
    try:
        spec_data = json.loads(spec_path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise SchemaError(f"{directory}: missing {SPEC_FILE}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{spec_path}:{e.lineno}: {e.msg}") from e

    gt_path = directory / GROUND_TRUTH_FILE
    ground_truth: Tuple[GroundTruthParam, ...] = ()
    if gt_path.exists():
        records = load_ground_truth(gt_path)
        if records:
            ground_truth = tuple(records[0].params)

    spec = ClipSpec.from_dict(spec_data, ground_truth)
    trajectories = [
        load_trajectory_csv(directory / trial_file(trial), units=spec.units)
        for trial in range(spec.trial_count)
    ]
    trial_params = [ParamVector(spec.family, tuple(v)) for v in spec_data.get('trial_params', [])]
    return ClipSet(
        spec=spec,
        seed=int(spec_data.get('seed', 0)),
        trajectories=trajectories,
        splits=list(spec_data['splits']),
        trial_params=trial_params,
    )


def discover_clipsets(root: PathLike) -> List[Path]:
    """Setting directories below root, sorted."""
    return sorted(p.parent for p in Path(root).glob(f"*/*/{SPEC_FILE}"))
