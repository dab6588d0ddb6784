"""
Pipeline Orchestrator

Drives the end-to-end runs behind the command line: synthesize clip sets,
fit them, evaluate the results, select equation families, render reports
and run robustness sweeps. Per-clip work fans out to worker threads under a
semaphore; every shared output goes through one writer and is sorted before
it is written, so file contents never depend on scheduling.
"""

import asyncio
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.analytics.calibration import load_rules
from src.analytics.estimator import FitConfig
from src.analytics.gt_fit import amplitude_correction_table, measure_ground_truth
from src.analytics.metrics import ConfusionMatrix, EvalReport, build_report, confusion, select_family
from src.analytics.robustness import (
    horizon_ablation,
    integrator_comparison,
    robustness_sweep,
    sweep_spread,
)
from src.analytics.runner import ClipOutcome, run_clip
from src.data.dataio import (
    MANIFEST_FILE,
    ResultsWriter,
    atomic_write_frame,
    atomic_write_json,
    atomic_write_text,
    discover_clipsets,
    load_results_csv,
    read_clipset,
    split_manifest,
    write_clipset,
    write_split_manifest,
)
from src.data.presets import ClipSet, ClipSpec
from src.data.synth_oracle import generate, preset
from src.physics.base import FamilyTag, IntegratorKind, OdeFamily, PhysIdError
from src.reporting.formatter import ReportFormatter
from src.utils import get_logger, log_with_data

logger = get_logger(__name__)

RESULTS_FILE = 'results.csv'
DIAGNOSTICS_FILE = 'diagnostics.csv'
REPORT_JSON = 'report.json'
REPORT_TEXT = 'report.txt'
SELECTION_FILE = 'selection.csv'
CONFUSION_FILE = 'confusion.json'

# Order breaks residual ties between families of equal arity.
SINGLE_BODY_CANDIDATES = (
    FamilyTag.FIRST_ORDER_DECAY,
    FamilyTag.TORRICELLI,
    FamilyTag.CONSTANT_ACCEL,
    FamilyTag.NONLINEAR_PENDULUM,
    FamilyTag.SECOND_ORDER_LINEAR,
)
MULTI_BODY_CANDIDATES = (FamilyTag.COUPLED_PENDULUM, FamilyTag.COUPLED_CONTACT)


def candidate_families(clipset: ClipSet) -> List[OdeFamily]:
    """Families a clip is scored against, given only its body count."""
    spec = clipset.spec
    bodies = spec.family.body_count
    if bodies > 1:
        return [OdeFamily(tag, bodies) for tag in MULTI_BODY_CANDIDATES]
    families = [OdeFamily(tag) for tag in SINGLE_BODY_CANDIDATES]
    if 'h0' in spec.metadata:
        families.append(OdeFamily(FamilyTag.FALLING_BALL_RADIUS))
    return families



def synthesize(spec: ClipSpec, seed: int, desk_scale: bool, max_samples: int) -> ClipSet:
    """Generate a clip set whose fitted ground-truth entries are measured from its trials."""
    clipset = generate(spec, seed, desk_scale=desk_scale, max_samples=max_samples)
    return replace(clipset, spec=clipset.spec.with_overrides(ground_truth=measure_ground_truth(clipset)))

@dataclass
class RunSummary:
    """Files written by a run and the clips that failed"""
    paths: Dict[str, Path] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


class PhysIdPipeline:
    """Orchestrates simulate, fit, eval, select, report and sweep runs"""

    def __init__(
        self,
        data_dir: str,
        output_dir: str,
        seed: int = 42,
        workers: int = 4,
        calibration_file: Optional[str] = None,
    ):
        self.data_dir = Path(data_dir)
        self.output_dir = Path(output_dir)
        self.seed = seed
        self.workers = max(1, workers)
        self.rules = load_rules(calibration_file)
        self.formatter = ReportFormatter()

        logger.info("Pipeline initialized", extra={'extra_fields': {
            'data_dir': str(self.data_dir),
            'output_dir': str(self.output_dir),
            'seed': seed,
            'workers': self.workers,
        }})

    async def _gather(self, jobs: Sequence) -> List:
        """Run blocking callables in worker threads, at most `workers` at a time."""
        semaphore = asyncio.Semaphore(self.workers)

        async def run(job):
            async with semaphore:
                return await asyncio.to_thread(job)

        return await asyncio.gather(*(run(job) for job in jobs))

    def _clipsets(self) -> List[ClipSet]:
        directories = discover_clipsets(self.data_dir)
        if not directories:
            raise PhysIdError(f"no clip sets found under {self.data_dir}")
        return [read_clipset(directory) for directory in directories]

    async def simulate(
        self,
        names: Sequence[str],
        desk_scale: bool = False,
        max_samples: int = 600,
        noise_std: Optional[float] = None,
    ) -> RunSummary:
        """Generate the named presets and write clip directories plus the split manifest."""
        specs = [preset(name) for name in names]
        if noise_std is not None:
            specs = [spec.with_overrides(noise_std=noise_std) for spec in specs]

        clipsets = await self._gather([
            (lambda spec=spec: synthesize(spec, self.seed, desk_scale, max_samples))
            for spec in specs
        ])
        summary = RunSummary()
        for clipset in clipsets:
            path = write_clipset(clipset, self.data_dir)
            summary.paths[clipset.spec.key] = path

        entries = [(c.spec.phenomenon, c.spec.setting, len(c)) for c in clipsets]
        ratios = {(c.spec.phenomenon, c.spec.setting): c.spec.split_ratio for c in clipsets}
        manifest = split_manifest(entries, self.seed, ratios)
        summary.paths['manifest'] = write_split_manifest(manifest, self.data_dir / MANIFEST_FILE)
        logger.info(f"Simulated {len(clipsets)} settings into {self.data_dir}")
        return summary

    async def fit(self, config: FitConfig, diagnostics: bool = False) -> RunSummary:
        """Fit every trial of every clip set under data_dir."""
        clipsets = self._clipsets()
        writer = ResultsWriter(self.output_dir / RESULTS_FILE)
        jobs = [
            (lambda c=clipset, t=trial: run_clip(c, t, config, self.rules))
            for clipset in clipsets
            for trial in range(len(clipset))
        ]
        log_with_data(logger, 'info', 'Fitting clips', clips=len(jobs), integrator=config.integrator.value,
                      loss=config.loss.value, horizon=config.horizon)
        outcomes: List[ClipOutcome] = await self._gather(jobs)

        summary = RunSummary()
        for outcome in outcomes:
            writer.add(outcome.rows)
            if outcome.failed:
                summary.failures.append(outcome.error)
        summary.paths['results'] = writer.flush()
        if diagnostics:
            summary.paths['diagnostics'] = self._write_diagnostics(outcomes)
        if summary.failures:
            logger.warning(f"{len(summary.failures)} of {len(outcomes)} clips failed")
        return summary

    def _write_diagnostics(self, outcomes: Sequence[ClipOutcome]) -> Path:
        records = []
        for outcome in outcomes:
            if outcome.fit is None:
                continue
            clip = outcome.clip_id
            for epoch, (loss, grad) in enumerate(zip(outcome.fit.loss_curve, outcome.fit.grad_norm_curve), 1):
                records.append((clip.phenomenon, clip.setting, clip.trial, clip.seed, epoch, loss, grad))
        frame = pd.DataFrame(
            records, columns=['phenomenon', 'setting', 'clip', 'seed', 'epoch', 'loss', 'grad_norm'],
        ).sort_values(['phenomenon', 'setting', 'clip', 'seed', 'epoch'], kind='mergesort')
        return atomic_write_frame(self.output_dir / DIAGNOSTICS_FILE, frame)

    def evaluate(self, results_path: Optional[Path] = None, split: Optional[str] = 'test') -> Tuple[EvalReport, Path]:
        """Aggregate a results CSV into report.json."""
        results_path = Path(results_path) if results_path else self.output_dir / RESULTS_FILE
        frame = load_results_csv(results_path)
        report = build_report(frame, split=split, selection=self._load_confusion())
        path = atomic_write_text(self.output_dir / REPORT_JSON, self.formatter.to_json(report))
        return report, path

    def _load_confusion(self) -> Optional[ConfusionMatrix]:
        path = self.output_dir / SELECTION_FILE
        if not path.exists():
            return None
        frame = pd.read_csv(path)
        return confusion(list(frame['truth']), list(frame['predicted']))

    async def select(self) -> Tuple[ConfusionMatrix, RunSummary]:
        """Predict the family of every trial and tabulate against the truth."""
        clipsets = self._clipsets()

        def job(clipset: ClipSet, trial: int):
            spec = clipset.spec
            fixed = {'h0': spec.metadata['h0']} if 'h0' in spec.metadata else None
            try:
                result = select_family(clipset.trajectories[trial], candidate_families(clipset), fixed)
            except PhysIdError as e:
                return clipset.clip_id(trial), None, str(e)
            return clipset.clip_id(trial), result.chosen.tag.value, None

        outcomes = await self._gather([
            (lambda c=clipset, t=trial: job(c, t)) for clipset in clipsets for trial in range(len(clipset))
        ])
        truth = {c.spec.key: c.spec.family.tag.value for c in clipsets}
        summary = RunSummary()
        records = []
        for clip_id, predicted, error in outcomes:
            if error:
                summary.failures.append(f"{clip_id}: {error}")
                continue
            records.append({
                'phenomenon': clip_id.phenomenon,
                'setting': clip_id.setting,
                'clip': clip_id.trial,
                'seed': clip_id.seed,
                'truth': truth[f"{clip_id.phenomenon}/{clip_id.setting}"],
                'predicted': predicted,
            })
        frame = pd.DataFrame(records, columns=['phenomenon', 'setting', 'clip', 'seed', 'truth', 'predicted'])
        frame = frame.sort_values(['phenomenon', 'setting', 'clip', 'seed'], kind='mergesort')
        summary.paths['selection'] = atomic_write_frame(self.output_dir / SELECTION_FILE, frame)
        matrix = confusion(list(frame['truth']), list(frame['predicted']))
        summary.paths['confusion'] = atomic_write_json(self.output_dir / CONFUSION_FILE, matrix.to_dict())
        logger.info(f"Selection accuracy {matrix.correct}/{matrix.total}")
        return matrix, summary

    def report(self, results_path: Optional[Path] = None, split: Optional[str] = 'test') -> Tuple[str, RunSummary]:
        """Render report.txt and report.json from the results CSV."""
        report, json_path = self.evaluate(results_path, split)
        amplitude = pd.DataFrame(amplitude_correction_table())
        text = self.formatter.render(
            report, [self.formatter.format_frame("Amplitude correction of the pendulum period", amplitude)],
        )
        summary = RunSummary()
        summary.paths['report_json'] = json_path
        summary.paths['report_text'] = atomic_write_text(self.output_dir / REPORT_TEXT, text)
        return text, summary

    async def sweep(
        self,
        names: Sequence[str],
        config: FitConfig,
        integrators: Sequence[str],
        horizons: Sequence[int],
        seeds: Sequence[int],
        axis: str = 'grid',
        desk_scale: bool = True,
        max_samples: int = 600,
    ) -> RunSummary:
        """
        Robustness runs per preset.

        axis 'grid' fits the full seed x integrator x horizon grid; 'horizon'
        and 'integrator' run the one-axis comparisons on the base seed.
        """
        kinds = [IntegratorKind(k) for k in integrators]
        specs = [preset(name) for name in names]

        if axis == 'grid':
            jobs = [
                (lambda s=spec: robustness_sweep(s, seeds, kinds, horizons, config, self.rules, desk_scale, max_samples))
                for spec in specs
            ]
        elif axis in ('horizon', 'integrator'):
            def one_axis(spec):
                clipset = generate(spec, self.seed, desk_scale=desk_scale, max_samples=max_samples)
                if axis == 'horizon':
                    return horizon_ablation(clipset, horizons, config, self.rules)
                return integrator_comparison(clipset, kinds, config, self.rules)
            jobs = [(lambda s=spec: one_axis(s)) for spec in specs]
        else:
            raise PhysIdError(f"unknown sweep axis {axis!r}")

        frames = [f for f in await self._gather(jobs) if not f.empty]
        combined = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
        summary = RunSummary()
        if axis == 'grid':
            summary.paths['sweep_results'] = atomic_write_frame(self.output_dir / 'sweep_results.csv', combined)
            summary.paths['sweep_spread'] = atomic_write_frame(
                self.output_dir / 'sweep_spread.csv', sweep_spread(combined),
            )
        else:
            summary.paths[f'{axis}_summary'] = atomic_write_frame(self.output_dir / f'{axis}_summary.csv', combined)
        logger.info(f"Sweep ({axis}) over {len(specs)} presets finished")
        return summary
