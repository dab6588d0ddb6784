"""Clip presets, synthetic generation and file I/O modules."""

from .presets import ClipSet, ClipSpec, list_presets
from .synth_oracle import generate, preset, presets
from .dataio import (
    ResultsRow,
    ResultsWriter,
    load_ground_truth,
    load_results_csv,
    load_trajectory_csv,
    read_clipset,
    write_clipset,
)

__all__ = [
    'ClipSet',
    'ClipSpec',
    'list_presets',
    'generate',
    'preset',
    'presets',
    'ResultsRow',
    'ResultsWriter',
    'load_ground_truth',
    'load_results_csv',
    'load_trajectory_csv',
    'read_clipset',
    'write_clipset',
]
