#!/usr/bin/env python3
"""
physid - Main Entry Point
Synthesizes clips, fits ODE parameters, evaluates and reports
"""
import argparse
import asyncio
import sys
from typing import Any, Dict, List, Optional, Sequence

from config.settings import settings
from src.analytics.estimator import INIT_STRATEGIES, FitConfig, LossKind
from src.data.presets import list_presets
from src.physics.base import IntegratorKind, PhysIdError
from src.pipeline import PhysIdPipeline, RunSummary
from src.utils.logging import get_logger, log_banner, setup_from_config

logger = get_logger(__name__)

CONFIG_PRESETS = ('baseline', 'corrected', 'multistep')
PRESET_GROUPS = ('all', 'desk', 'lab')


def _csv_ints(raw: str) -> List[int]:
    return [int(item) for item in raw.split(',') if item.strip()]


def _csv_floats(raw: str) -> List[float]:
    return [float(item) for item in raw.split(',') if item.strip()]


def _csv_strs(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(',') if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per subcommand"""
    parser = argparse.ArgumentParser(prog='physid', description='Physics parameter identification toolkit')
    parser.add_argument('--seed', type=int, default=None, help='Base seed (default: PHYSID_SEED or 42)')
    parser.add_argument('--data-dir', default=None, help='Clip directory root (default: DATA_DIR)')
    parser.add_argument('--output-dir', default=None, help='Output directory (default: OUTPUT_DIR)')
    parser.add_argument('--workers', type=int, default=None, help='Concurrent clip fits (default: PHYSID_WORKERS)')
    parser.add_argument('--log-level', default=None, help='Override LOG_LEVEL')

    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help='Synthesize preset clip sets')
    simulate.add_argument(
        '--preset', action='append', default=None,
        help='Preset name or group (all, desk, lab); repeatable (default: desk)',
    )
    simulate.add_argument('--desk-scale', action='store_true', help='Cap clips at --max-samples frames')
    simulate.add_argument('--max-samples', type=int, default=None, help='Frame cap (default: PHYSID_MAX_SAMPLES)')
    simulate.add_argument('--noise-std', type=float, default=None, help='Override observation noise')

    for name in ('fit', 'sweep'):
        target = sub.add_parser(name, help='Fit clip sets' if name == 'fit' else 'Robustness sweep')
        target.add_argument('--config', choices=CONFIG_PRESETS, default='corrected',
                            help='baseline (euler-buggy, one-step), corrected (euler, one-step), '
                                 'multistep (euler, K=5)')
        target.add_argument('--loss', choices=[k.value for k in LossKind], default=None)
        target.add_argument('--horizon', type=int, default=None, help='Rollout horizon K')
        target.add_argument('--weights', type=_csv_floats, default=None, help='Comma-separated w_1..w_K')
        target.add_argument('--integrator', choices=[k.value for k in IntegratorKind], default=None)
        target.add_argument('--epochs', type=int, default=None, help='Adam epochs (default: PHYSID_EPOCHS)')
        target.add_argument('--lr', type=float, default=None, help='Adam learning rate (default: PHYSID_LR)')
        target.add_argument('--init', choices=('preset',) + INIT_STRATEGIES, default=None,
                            help='Fit start: preset override, or default, period, ls for every clip '
                                 '(default: preset, baseline uses default)')

    sub.choices['fit'].add_argument('--diagnostics', action='store_true', help='Write per-epoch loss curves')

    sweep = sub.choices['sweep']
    sweep.add_argument('--preset', action='append', default=None, help='Preset name or group; repeatable')
    sweep.add_argument('--axis', choices=('grid', 'horizon', 'integrator'), default='grid')
    sweep.add_argument('--integrators', type=_csv_strs, default=None,
                       help='Comma-separated (default: PHYSID_SWEEP_INTEGRATORS)')
    sweep.add_argument('--horizons', type=_csv_ints, default=None, help='Comma-separated (default: PHYSID_SWEEP_HORIZONS)')
    sweep.add_argument('--seeds', type=_csv_ints, default=None, help='Comma-separated (default: PHYSID_SWEEP_SEEDS)')
    sweep.add_argument('--desk-scale', action='store_true', help='Cap clips at PHYSID_MAX_SAMPLES frames')

    for name in ('eval', 'report'):
        target = sub.add_parser(name, help='Aggregate results' if name == 'eval' else 'Render summary tables')
        target.add_argument('--results', default=None, help='Results CSV (default: <output-dir>/results.csv)')
        target.add_argument('--split', default='test', help="Split scored for MAE, or 'all'")

    sub.add_parser('select', help='Select the equation family of every clip')
    return parser


def resolve_presets(values: Optional[Sequence[str]], default: str = 'desk') -> List[str]:
    """Expand preset names and group names, keeping first-seen order."""
    names: List[str] = []
    for value in values or [default]:
        expanded = list_presets(None if value == 'all' else value) if value in PRESET_GROUPS else [value]
        names.extend(n for n in expanded if n not in names)
    return names


def resolve_fit_config(args: argparse.Namespace, seed: int) -> FitConfig:
    """Named configuration, then explicit flags on top."""
    overrides: Dict[str, Any] = {
        'epochs': args.epochs if args.epochs is not None else settings.epochs,
        'lr_params': args.lr if args.lr is not None else settings.learning_rate,
        'divergence_limit': settings.divergence_limit,
        'seed': seed,
    }
    if args.integrator:
        overrides['integrator'] = IntegratorKind(args.integrator)
    if args.horizon is not None:
        overrides['horizon'] = args.horizon
        if args.loss is None:
            overrides['loss'] = LossKind.ONE_STEP if args.horizon == 1 else LossKind.MULTI_STEP
    if args.loss:
        overrides['loss'] = LossKind(args.loss)
        if args.horizon is None:
            overrides['horizon'] = 1 if overrides['loss'] is LossKind.ONE_STEP else 5
    if args.weights is not None:
        overrides['weights'] = tuple(args.weights)
    elif 'horizon' in overrides:
        overrides['weights'] = None
    if args.init is not None:
        overrides['init_strategy'] = None if args.init == 'preset' else args.init
    return FitConfig.preset(args.config, **overrides)


def print_config(title: str, values: Dict[str, Any]) -> None:
    """Echo the resolved configuration to stdout and the log."""
    print("=" * 60)
    print(title)
    for key in sorted(values):
        print(f"  {key}: {values[key]}")
    print("=" * 60)
    log_banner(logger, title, values)


def _fit_values(config: FitConfig) -> Dict[str, Any]:
    return {
        'loss': config.loss.value,
        'horizon': config.horizon,
        'weights': list(config.weights),
        'integrator': config.integrator.value,
        'epochs': config.epochs,
        'lr_params': config.lr_params,
        'init': config.init_strategy or 'preset',
    }


def _finish(summary: RunSummary) -> int:
    for name, path in sorted(summary.paths.items()):
        print(f"{name}: {path}")
    for failure in summary.failures:
        print(f"FAILED {failure}", file=sys.stderr)
    return 0 if summary.ok else 1


async def run(args: argparse.Namespace) -> int:
    """Dispatch one subcommand"""
    seed = args.seed if args.seed is not None else settings.seed
    values: Dict[str, Any] = dict(settings.to_dict())
    values.update({
        'command': args.command,
        'seed': seed,
        'data_dir': args.data_dir or settings.data_dir,
        'output_dir': args.output_dir or settings.output_dir,
        'workers': args.workers or settings.workers,
    })

    config = None
    if args.command in ('fit', 'sweep'):
        config = resolve_fit_config(args, seed)
        values.update(_fit_values(config))
    if args.command in ('simulate', 'sweep'):
        values['presets'] = resolve_presets(args.preset)
    if args.command == 'simulate':
        values['desk_scale'] = args.desk_scale
        values['max_samples'] = args.max_samples or settings.max_samples
        values['noise_std'] = args.noise_std
    if args.command == 'sweep':
        values.update({
            'axis': args.axis,
            'desk_scale': args.desk_scale,
            'sweep_integrators': args.integrators or settings.sweep_integrators,
            'sweep_horizons': args.horizons or settings.sweep_horizons,
            'sweep_seeds': args.seeds or settings.sweep_seeds,
        })
    if args.command in ('eval', 'report'):
        values['results'] = args.results
        values['split'] = args.split
    print_config(f"PHYSID {args.command.upper()} CONFIGURATION", values)

    pipeline = PhysIdPipeline(
        data_dir=values['data_dir'],
        output_dir=values['output_dir'],
        seed=seed,
        workers=values['workers'],
        calibration_file=settings.calibration_file,
    )

    if args.command == 'simulate':
        summary = await pipeline.simulate(
            values['presets'], args.desk_scale, values['max_samples'], args.noise_std,
        )
    elif args.command == 'fit':
        summary = await pipeline.fit(config, diagnostics=args.diagnostics)
    elif args.command == 'eval':
        split = None if args.split == 'all' else args.split
        report, path = pipeline.evaluate(args.results, split)
        summary = RunSummary(paths={'report_json': path})
        print(f"MAE rows: {len(report.rows)}")
    elif args.command == 'select':
        matrix, summary = await pipeline.select()
        print(pipeline.formatter.format_confusion(matrix))
    elif args.command == 'report':
        split = None if args.split == 'all' else args.split
        text, summary = pipeline.report(args.results, split)
        print(text)
    else:
        summary = await pipeline.sweep(
            values['presets'], config,
            values['sweep_integrators'], values['sweep_horizons'], values['sweep_seeds'],
            axis=args.axis, desk_scale=args.desk_scale, max_samples=settings.max_samples,
        )
    return _finish(summary)


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Command-line entry point.

    Returns:
        Exit status: 0 on success, 1 when any clip or step failed, 2 on
        usage errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_from_config(args.log_level)
    try:
        return asyncio.run(run(args))
    except PhysIdError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(cli())
