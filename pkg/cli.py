"""
Command-line front end for kernel expectile regression
Sub-commands: train, predict, cv, bench, curves
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from config import Settings, load_settings
from core_types import (ConsistencyError, DataFormatError, HyperParams, ModelFormatError,
                        SolverOptions, WorkingSetStrategy)
from experiment import (DEFAULT_CURVE_TAUS, GridSpec, RawDataset, bench_configs, benchmark,
                        cv_select, default_grid, evaluate, expectile_curves, ingest, refit,
                        scale_to_unit_box, split, train_model, write_table)
from model import Model, Scaling

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOT_CONVERGED = 3


class UsageError(Exception):
    """Flags that parse but do not combine into a valid run"""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage status instead of argparse's 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(verbosity: int, log_file: Optional[str] = None):
    level = logging.INFO
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )


def _float_list(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(choices):
    def parse(text: str) -> List[str]:
        values = [part.strip() for part in text.split(',') if part.strip()]
        bad = [v for v in values if v not in choices]
        if bad or not values:
            raise argparse.ArgumentTypeError(f"choose from {', '.join(choices)}, got {text!r}")
        return values
    return parse


# ----------------------------------------------------------------------
# Argument groups
# ----------------------------------------------------------------------

def _add_data_args(parser: argparse.ArgumentParser, label_default: Optional[int] = -1):
    parser.add_argument('--format', choices=['csv', 'sparse'], default='csv',
                        help='Input format: delimiter-separated or "label idx:val ..." (default: csv)')
    parser.add_argument('--delimiter', default=',', help='Input field separator for csv (default: ,)')
    parser.add_argument('--header', action=argparse.BooleanOptionalAction, default=False,
                        help='Input csv starts with a header row')
    parser.add_argument('--label-column', type=int, default=label_default,
                        help='Label column of csv input, negative counts from the end')
    parser.add_argument('--n-features', type=int, default=None,
                        help='Dimension of sparse input (default: largest index)')


def _add_param_args(parser: argparse.ArgumentParser, with_tau: bool = True,
                    with_fixed: bool = True, default_gamma: Optional[float] = None):
    if with_tau:
        parser.add_argument('--tau', type=float, required=True, help='Expectile level in (0, 1)')
    if with_fixed:
        cost = parser.add_mutually_exclusive_group()
        cost.add_argument('--lambda', dest='lam', type=float, help='Regularization weight lambda')
        cost.add_argument('--cost', type=float, help='Cost C = 1/(2 n lambda)')
        gamma_help = 'Kernel width gamma in exp(-gamma^2 ||x - x2||^2)'
        if default_gamma is not None:
            gamma_help += f' (default: {default_gamma:g})'
        parser.add_argument('--gamma', type=float, default=default_gamma, help=gamma_help)
    parser.add_argument('--epsilon', type=float, default=None, help='Stopping tolerance (default: 1e-3)')
    parser.add_argument('--clip', type=float, default=None, help='Clipping bound M (default: 1)')
    parser.add_argument('--gap', choices=['clipped', 'unclipped'], default='unclipped',
                        help='Duality gap variant for stopping (default: unclipped)')
    parser.add_argument('--solver', choices=['1d', '2d'], default='2d',
                        help='SMO variant (default: 2d)')
    parser.add_argument('--wss', choices=[s.value for s in WorkingSetStrategy], default='wss2',
                        help='Working set selection (default: wss2; scan runs the 1D solver)')
    parser.add_argument('--knn', type=int, default=None, help='Neighbours for wss2 (default: 15)')
    parser.add_argument('--max-iter', type=int, default=None, help='Iteration cap per training run')
    parser.add_argument('--kernel-mode', choices=['auto', 'full', 'lru'], default='auto',
                        help='Kernel storage (default: full matrix up to full_matrix_max_n points)')
    parser.add_argument('--debug', action='store_true',
                        help='Recompute solver state from scratch at checkpoints')


def _add_grid_args(parser: argparse.ArgumentParser):
    parser.add_argument('--folds', type=int, default=None, help='CV folds (default: 5)')
    parser.add_argument('--seed', type=int, default=None, help='Random seed (default: 0)')
    parser.add_argument('--threads', type=int, default=None, help='Worker threads (default: 1)')
    parser.add_argument('--grid-lambdas', type=int, default=10, help='Default-grid lambda count')
    parser.add_argument('--grid-gammas', type=int, default=10, help='Default-grid gamma count')
    parser.add_argument('--lambdas', type=_float_list, default=None, help='Explicit lambda list')
    parser.add_argument('--gammas', type=_float_list, default=None, help='Explicit gamma list')
    parser.add_argument('--warm-start', action=argparse.BooleanOptionalAction, default=True,
                        help='Warm-start along the lambda path (default: on)')
    parser.add_argument('--refit-gamma', choices=['scaled', 'raw'], default=None,
                        help='Kernel width of the final refit (default: scaled)')


def _add_output_args(parser: argparse.ArgumentParser):
    parser.add_argument('--out', default=None, help='Table destination (default: stdout)')
    parser.add_argument('--out-delimiter', default=None, help='Table delimiter (default: TAB)')


def build_parser() -> CliParser:
    parser = CliParser(prog='cli.py', description='Kernel expectile regression with SMO solvers')
    parser.add_argument('--config', default=None, help='TOML settings file')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='Debug logging')
    parser.add_argument('-q', '--quiet', action='count', default=0, help='Warnings only')
    commands = parser.add_subparsers(dest='command', parser_class=CliParser)

    train = commands.add_parser('train', help='Train one model and save it')
    train.add_argument('data', help='Training data file')
    train.add_argument('--model-out', default='model.txt', help='Model destination (default: model.txt)')
    train.add_argument('--split', type=float, default=None,
                       help='Train on this fraction and report the test risk on the rest')
    train.add_argument('--seed', type=int, default=None, help='Split seed (default: 0)')
    train.add_argument('--no-scale', action='store_true',
                       help='Train on the raw values instead of the unit box')
    _add_data_args(train)
    _add_param_args(train, default_gamma=1.0)
    _add_output_args(train)

    predict = commands.add_parser('predict', help='Predict with a saved model')
    predict.add_argument('model', help='Model file')
    predict.add_argument('data', help='Feature file')
    predict.add_argument('--clip', action='store_true', help='Clip scaled predictions to [-M, M]')
    _add_data_args(predict, label_default=None)
    _add_output_args(predict)

    cv = commands.add_parser('cv', help='Cross-validate over a grid and refit the best cell')
    cv.add_argument('data', help='Training data file')
    cv.add_argument('--model-out', default='model.txt', help='Model destination (default: model.txt)')
    cv.add_argument('--split', type=float, default=None,
                    help='Hold out 1 - fraction of the data and report its test risk')
    _add_data_args(cv)
    _add_param_args(cv, with_fixed=False)
    _add_grid_args(cv)
    _add_output_args(cv)

    bench = commands.add_parser('bench', help='Iteration and time statistics of grid searches')
    bench.add_argument('data', nargs='+', help='Data files')
    bench.add_argument('--taus', type=_float_list, default=[0.5], help='Expectile levels')
    bench.add_argument('--solvers', type=_str_list(['1d', '2d']), default=['2d'])
    bench.add_argument('--wss-list', type=_str_list([s.value for s in WorkingSetStrategy]),
                       default=['wss1', 'wss2'], help='Working set strategies to compare')
    bench.add_argument('--knn-list', type=_int_list, default=None, help='Neighbour counts for wss2')
    bench.add_argument('--init', type=_str_list(['warm', 'cold']), default=['warm'])
    bench.add_argument('--gaps', type=_str_list(['unclipped', 'clipped']), default=['unclipped'])
    bench.add_argument('--epsilon', type=float, default=None)
    bench.add_argument('--clip', type=float, default=None)
    bench.add_argument('--max-iter', type=int, default=None)
    bench.add_argument('--kernel-mode', choices=['auto', 'full', 'lru'], default='auto')
    _add_data_args(bench)
    _add_grid_args(bench)
    _add_output_args(bench)

    curves = commands.add_parser('curves', help='Expectile curves over one feature')
    curves.add_argument('data', help='Training data file')
    curves.add_argument('--taus', type=_float_list, default=list(DEFAULT_CURVE_TAUS),
                        help='Expectile levels (default: 0.01,...,0.99)')
    curves.add_argument('--points', type=int, default=100, help='Grid resolution (default: 100)')
    curves.add_argument('--feature', type=int, default=None, help='Curve feature for d > 1')
    curves.add_argument('--sqrt-x', action='store_true', help='Square-root transform the curve feature')
    curves.add_argument('--select', action='store_true', help='Pick lambda and gamma by CV per tau')
    _add_data_args(curves)
    _add_param_args(curves, with_tau=False)
    _add_grid_args(curves)
    _add_output_args(curves)
    return parser


# ----------------------------------------------------------------------
# Shared helpers
# ----------------------------------------------------------------------

def resolve_settings(args) -> Settings:
    settings = load_settings(args.config)
    return settings.override(
        epsilon=getattr(args, 'epsilon', None),
        clip_m=args.clip if isinstance(getattr(args, 'clip', None), float) else None,
        max_iter=getattr(args, 'max_iter', None),
        knn=getattr(args, 'knn', None),
        folds=getattr(args, 'folds', None),
        seed=getattr(args, 'seed', None),
        threads=getattr(args, 'threads', None),
        delimiter=getattr(args, 'out_delimiter', None),
        refit_gamma=getattr(args, 'refit_gamma', None),
        debug=True if getattr(args, 'debug', False) else None,
    )


def solver_options(args, settings: Settings) -> SolverOptions:
    return SolverOptions(solver=getattr(args, 'solver', '2d'), max_iter=settings.max_iter,
                         debug=settings.debug, debug_interval=settings.debug_interval,
                         log_every=settings.log_every, kernel_mode=args.kernel_mode,
                         cache_rows=settings.cache_rows,
                         full_matrix_max_n=settings.full_matrix_max_n)


def param_kwargs(args, settings: Settings) -> dict:
    return {'epsilon': settings.epsilon, 'clip_m': settings.clip_m,
            'use_clipped_gap': args.gap == 'clipped',
            'wss': WorkingSetStrategy(args.wss), 'knn': settings.knn}


def read_data(args, path: str, allow_empty: bool = False) -> RawDataset:
    return ingest(path, fmt=args.format, delimiter=args.delimiter, header=args.header,
                  label_column=args.label_column, n_features=args.n_features,
                  allow_empty=allow_empty)


def grid_for(args, n: int, d: int) -> GridSpec:
    if args.lambdas is not None or args.gammas is not None:
        default = default_grid(n, d, args.grid_lambdas, args.grid_gammas)
        return GridSpec.from_values(args.lambdas if args.lambdas is not None else default.lambdas,
                                    args.gammas if args.gammas is not None else default.gammas)
    return default_grid(n, d, args.grid_lambdas, args.grid_gammas)


def emit(frame: pd.DataFrame, args, settings: Settings):
    if args.out:
        write_table(frame, args.out, settings.delimiter)
        logger.info(f"Table written to {args.out}")
    else:
        write_table(frame, sys.stdout, settings.delimiter)


# ----------------------------------------------------------------------
# Sub-commands
# ----------------------------------------------------------------------

def cmd_train(args, settings: Settings) -> int:
    raw = read_data(args, args.data)
    test_raw = None
    if args.split is not None:
        raw, test_raw = split(raw, args.split, settings.seed)
    if args.no_scale:
        scaling = Scaling.identity(raw.d)
        data = scaling.apply(raw.features, raw.labels)
    else:
        data, scaling = scale_to_unit_box(raw)

    gamma = args.gamma
    kwargs = param_kwargs(args, settings)
    if args.cost is not None:
        params = HyperParams(tau=args.tau, cost=args.cost, gamma=gamma, **kwargs)
    elif args.lam is not None:
        params = HyperParams.from_lambda(data.n, args.lam, tau=args.tau, gamma=gamma, **kwargs)
    else:
        raise UsageError("train needs --lambda or --cost")

    model, result = train_model(data, params, solver_options(args, settings), scaling=scaling)
    model.save(args.model_out)
    summary = {'n': data.n, 'support': model.m, 'iterations': result.iterations,
               'gap': result.gap.s, 'threshold': result.gap.threshold,
               'seconds': result.seconds, 'converged': result.converged}
    if test_raw is not None:
        test = scaling.apply(test_raw.features, test_raw.labels)
        summary['test_risk'] = evaluate(model, test, params.tau, params.use_clipped_gap)
    emit(pd.DataFrame([summary]), args, settings)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_predict(args, settings: Settings) -> int:
    model = Model.load(args.model)
    raw = read_data(args, args.data, allow_empty=True)
    if raw.n == 0:
        return EXIT_OK
    if raw.d != model.d:
        raise DataFormatError(f"expected {model.d} features, got {raw.d}", path=args.data, line=1)
    predictions = model.predict_batch(raw.features, clipped=args.clip)
    emit(pd.DataFrame({'prediction': predictions}), args, settings)
    return EXIT_OK


def cmd_cv(args, settings: Settings) -> int:
    raw = read_data(args, args.data)
    test_raw = None
    if args.split is not None:
        raw, test_raw = split(raw, args.split, settings.seed)
    data, scaling = scale_to_unit_box(raw)
    grid = grid_for(args, data.n, data.d)
    kwargs = param_kwargs(args, settings)
    options = solver_options(args, settings)

    report = cv_select(data, args.tau, grid, folds=settings.folds, seed=settings.seed,
                       options=options, threads=settings.threads,
                       warm_start=args.warm_start, **kwargs)
    model, result = refit(data, args.tau, report, scaling, options, settings.refit_gamma, **kwargs)
    model.save(args.model_out)

    cells = report.cells.copy()
    cells['best'] = (cells['lambda'] == report.best_lambda) & (cells['gamma'] == report.best_gamma)
    if test_raw is not None:
        test = scaling.apply(test_raw.features, test_raw.labels)
        test_risk = evaluate(model, test, args.tau, kwargs['use_clipped_gap'])
        logger.info(f"Test risk of the refitted model: {test_risk:.6g}")
        cells['test_risk'] = np.where(cells['best'], test_risk, np.nan)
    emit(cells, args, settings)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_bench(args, settings: Settings) -> int:
    datasets = {}
    for path in args.data:
        data, _ = scale_to_unit_box(read_data(args, path))
        datasets[path] = data
    first = next(iter(datasets.values()))
    grid = None
    if args.lambdas is not None or args.gammas is not None or len(datasets) == 1:
        grid = grid_for(args, first.n, first.d)
    knn_list = args.knn_list or [settings.knn]
    configs = bench_configs(args.solvers, args.wss_list, knn_list,
                            [init == 'warm' for init in args.init],
                            [gap == 'clipped' for gap in args.gaps])
    table = benchmark(datasets, args.taus, configs, grid=grid, folds=settings.folds,
                      seed=settings.seed, options=solver_options(args, settings),
                      threads=settings.threads, epsilon=settings.epsilon, clip_m=settings.clip_m)
    emit(table, args, settings)
    return EXIT_OK


def cmd_curves(args, settings: Settings) -> int:
    raw = read_data(args, args.data)
    kwargs = param_kwargs(args, settings)
    options = solver_options(args, settings)
    select = None
    lam = args.lam
    if args.select:
        select = grid_for(args, raw.n, raw.d)
    else:
        if args.gamma is None or (args.lam is None and args.cost is None):
            raise UsageError("curves needs --lambda/--cost and --gamma, or --select")
        if args.cost is not None:
            lam = 1.0 / (2.0 * raw.n * args.cost)
    table = expectile_curves(raw, args.taus, lam=lam, gamma=args.gamma, points=args.points,
                             feature=args.feature, sqrt_x=args.sqrt_x, options=options,
                             select=select, folds=settings.folds, seed=settings.seed,
                             threads=settings.threads, refit_gamma=settings.refit_gamma, **kwargs)
    emit(table, args, settings)
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'predict': cmd_predict,
    'cv': cmd_cv,
    'bench': cmd_bench,
    'curves': cmd_curves,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the sub-command and map failures to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        settings = resolve_settings(args)
    except (ValueError, FileNotFoundError) as e:
        setup_logging(args.verbose - args.quiet)
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    setup_logging(args.verbose - args.quiet, settings.log_file)

    try:
        return COMMANDS[args.command](args, settings)
    except UsageError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (DataFormatError, ModelFormatError, OSError, ConsistencyError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_DATA
    except ValueError as e:
        logger.error(f"Invalid argument: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
