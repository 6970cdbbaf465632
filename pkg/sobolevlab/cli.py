"""
Command line entry point.

    sobolevlab mesh   --dim N --level L --out FILE
    sobolevlab solve  --dim N --p P --level L [--tol T] [--max-iters K] [--fit] --out DIR
    sobolevlab rates  --dim N --p P [P ...] --max-level L [--jobs K] --out DIR
    sobolevlab lemmas --dim N --p P [--seed S] --out DIR

A ``--config`` file (``key = value``) may preload any flag; flags win.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from sobolevlab.config import Settings, load_settings
from sobolevlab.errors import CheckFailure, ConfigError, ErrorHandler
from sobolevlab.experiments import run_lemma_suite, run_sweeps
from sobolevlab.manifold import Metric, nearest_extremal
from sobolevlab.mesh import build_ball_mesh, mesh_metrics, mesh_volume
from sobolevlab.reports import ReportStore
from sobolevlab.solver import solve_Sh
from utils.logging import get_logger, setup_logging

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog='sobolevlab',
                                 description='Finite element study of the Sobolev inequality on the unit ball.')
    ap.add_argument('--config', type=Path, default=None, help='key = value file preloading flags')
    ap.add_argument('--verbose', action='store_true', help='debug output on the console')
    ap.add_argument('--log-dir', type=Path, default=None, help='directory for the rotating log files')
    sub = ap.add_subparsers(dest='command', required=True)

    mesh = sub.add_parser('mesh', help='build and write a ball mesh')
    mesh.add_argument('--dim', type=int)
    mesh.add_argument('--level', type=int)
    mesh.add_argument('--out', type=Path, required=True, help='mesh file')

    solve = sub.add_parser('solve', help='compute S_h on one mesh level')
    solve.add_argument('--dim', type=int)
    solve.add_argument('--p', type=float)
    solve.add_argument('--level', type=int)
    solve.add_argument('--tol', type=float, default=None, help='gradient-norm tolerance')
    solve.add_argument('--max-iters', type=int, default=None)
    solve.add_argument('--fit', action='store_true', help='also fit the nearest extremal')
    solve.add_argument('--out', type=Path, default=None)

    rates = sub.add_parser('rates', help='convergence sweep and rate fit')
    rates.add_argument('--dim', type=int)
    rates.add_argument('--p', type=float, nargs='+')
    rates.add_argument('--max-level', type=int)
    rates.add_argument('--jobs', type=int, default=None)
    rates.add_argument('--no-fit', action='store_true', help='skip nearest-extremal diagnostics')
    rates.add_argument('--out', type=Path, default=None)

    lemmas = sub.add_parser('lemmas', help='run the verification checks')
    lemmas.add_argument('--dim', type=int)
    lemmas.add_argument('--p', type=float)
    lemmas.add_argument('--seed', type=int, default=None)
    lemmas.add_argument('--out', type=Path, default=None)
    return ap


def _settings_from(args: argparse.Namespace) -> Settings:
    overrides = {
        'dim': getattr(args, 'dim', None),
        'level': getattr(args, 'level', None),
        'max_level': getattr(args, 'max_level', None),
        'jobs': getattr(args, 'jobs', None),
        'seed': getattr(args, 'seed', None),
        'grad_tol': getattr(args, 'tol', None),
        'max_iters': getattr(args, 'max_iters', None),
        'log_dir': args.log_dir,
    }
    p = getattr(args, 'p', None)
    overrides['p'] = p[0] if isinstance(p, list) else p
    out = getattr(args, 'out', None)
    if out is not None and args.command != 'mesh':
        overrides['out_dir'] = out
    if args.verbose:
        overrides['log_level'] = 'DEBUG'
    return load_settings(args.config, overrides)


def _require(settings: Settings, *names: str):
    missing = [n for n in names if getattr(settings, n) is None]
    if missing:
        flags = ', '.join('--' + n.replace('_', '-') for n in missing)
        raise ConfigError(f'Missing required value(s): {flags}', {'missing': missing})


def cmd_mesh(args: argparse.Namespace, settings: Settings) -> int:
    _require(settings, 'dim', 'level')
    mesh = build_ball_mesh(settings.dim, settings.level)
    out = Path(args.out)
    store = ReportStore(out.parent)
    path = store.write_mesh(mesh, out.name)
    metrics = mesh_metrics(mesh)
    record = {'mesh_file': str(path), 'dim': mesh.dim, 'level': settings.level, 'h': metrics.h,
              'sigma': metrics.sigma, 'q0': metrics.q0, 'volume': mesh_volume(mesh),
              'vertices': mesh.n_vertices, 'elements': mesh.n_elements}
    store.write_record(record, out.stem + '.json')
    print(json.dumps(record, sort_keys=True))
    return 0


def cmd_solve(args: argparse.Namespace, settings: Settings) -> int:
    _require(settings, 'dim', 'p', 'level')
    mesh = build_ball_mesh(settings.dim, settings.level)
    result = solve_Sh(mesh, settings.p, settings.solver_options(settings.dim))
    fit = nearest_extremal(result.u_h, settings.p, Metric.SOBOLEV_P) if args.fit else None

    store = ReportStore(settings.out_dir)
    paths = store.write_solve(result, settings.p, fit)
    print(json.dumps({'S_h': result.S_h, 'converged': result.converged, 'iterations': result.iterations,
                      'files': [str(p) for p in paths]}, sort_keys=True))
    if not result.converged:
        logger.warning(f"Solver did not converge after {result.iterations} iterations; best iterate written")
    return 0


def cmd_rates(args: argparse.Namespace, settings: Settings) -> int:
    _require(settings, 'dim', 'max_level')
    p_values: List[float] = args.p if args.p else ([settings.p] if settings.p is not None else [])
    if not p_values:
        raise ConfigError('Missing required value(s): --p', {'missing': ['p']})

    configs = [(p, settings.dim) for p in p_values]
    reports = run_sweeps(configs, settings.max_level, settings=settings, jobs=settings.jobs,
                         fit_nearest=not args.no_fit)

    store = ReportStore(settings.out_dir)
    failed = []
    for report in reports:
        prefix = '' if len(reports) == 1 else f'p{report.p:g}_'
        store.write_rates(report, prefix)
        summary = report.summary()
        print(json.dumps({k: summary[k] for k in ('p', 'N', 'fitted_slope', 'alpha_target',
                                                  'rate_pass', 'inconclusive')}, sort_keys=True))
        if report.inconclusive or not report.rate_pass:
            failed.append(report.p)

    if failed:
        raise CheckFailure('Rate fit failed or inconclusive', {'p': failed, 'dim': settings.dim})
    return 0


def cmd_lemmas(args: argparse.Namespace, settings: Settings) -> int:
    _require(settings, 'dim', 'p')
    reports = run_lemma_suite(settings.p, settings.dim, seed=settings.seed)

    store = ReportStore(settings.out_dir)
    store.write_checks(reports)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {'; '.join(r.notes)}".rstrip())

    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise CheckFailure(f'{len(failed)} check(s) failed', {'checks': failed})
    return 0


COMMANDS = {
    'mesh': cmd_mesh,
    'solve': cmd_solve,
    'rates': cmd_rates,
    'lemmas': cmd_lemmas,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = ErrorHandler()
    try:
        settings = _settings_from(args)
        setup_logging(getattr(logging, settings.log_level.upper()), settings.log_dir)
        logger.info(f"sobolevlab {args.command}", extra={'stage': args.command, 'p': settings.p,
                                                          'dim': settings.dim})
        return COMMANDS[args.command](args, settings)
    except Exception as e:
        record, code = handler.handle(e)
        print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)
        return code


if __name__ == '__main__':
    sys.exit(main())
