"""
Experiment harness for kernel expectile regression
Data ingestion, scaling, splits, grids, cross-validation, benchmarks, curves and result tables
"""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import IO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.stats import norm
from sklearn.datasets import load_svmlight_file
from sklearn.model_selection import KFold

from core_types import (DataFormatError, HyperParams, SolverOptions, TrainingSet, TrainResult,
                        WorkingSetStrategy, als_risk)
from dual_state import DualState
from kernel import KernelCache, KnnIndex, build_knn, cross_kernel
from model import Model, Scaling
from onedim import IterationCallback, train_1d
from twodim import train_2d

logger = logging.getLogger(__name__)

# Default grid constants: lambda in [LAMBDA_LOW / n, 1], gamma in [GAMMA_LOW * n^(-1/d), GAMMA_HIGH]
LAMBDA_LOW = 0.001
GAMMA_LOW = 0.1
GAMMA_HIGH = 0.2

DEFAULT_CURVE_TAUS = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)

TableDestination = Union[str, IO[str]]


# ----------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RawDataset:
    """Unscaled features and labels as read from disk; labels is None for feature-only files"""
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    path: Optional[str] = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "RawDataset":
        idx = np.asarray(indices, dtype=np.intp)
        labels = None if self.labels is None else self.labels[idx]
        return RawDataset(self.features[idx], labels, self.path)


def _read_csv(path: str, delimiter: str, header: bool, label_column: Optional[int],
              allow_empty: bool) -> RawDataset:
    try:
        frame = pd.read_csv(path, sep=delimiter, header=0 if header else None, dtype=str,
                            skip_blank_lines=False, engine='python')
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame()
    except pd.errors.ParserError as e:
        raise DataFormatError(f"inconsistent record: {e}", path=path)

    frame = frame.dropna(how='all')
    if frame.empty:
        if allow_empty:
            return RawDataset(np.empty((0, 0)), None if label_column is None else np.empty(0), path)
        raise DataFormatError("file contains no records", path=path)

    offset = 2 if header else 1
    values = np.empty(frame.shape, dtype=np.float64)
    for col in range(frame.shape[1]):
        raw = frame.iloc[:, col]
        parsed = pd.to_numeric(raw, errors='coerce')
        bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=np.float64))
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            token = raw.iloc[row]
            what = "missing value" if pd.isna(token) else f"non-numeric value {token!r}"
            raise DataFormatError(what, path=path, line=int(frame.index[row]) + offset,
                                  column=col + 1)
        values[:, col] = parsed.to_numpy(dtype=np.float64)

    if label_column is None:
        return RawDataset(values, None, path)
    ncols = values.shape[1]
    label_idx = label_column if label_column >= 0 else ncols + label_column
    if not 0 <= label_idx < ncols or ncols < 2:
        raise DataFormatError(f"label column {label_column} does not exist in {ncols} columns",
                              path=path)
    features = np.delete(values, label_idx, axis=1)
    return RawDataset(features, values[:, label_idx], path)


def _locate_sparse_error(path: str,
                         n_features: Optional[int]) -> Tuple[Optional[int], Optional[int], str]:
    """First malformed record of a sparse file as (line, field, message)"""
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            fields = line.split('#', 1)[0].split()
            if not fields:
                continue
            for pos, token in enumerate(fields, start=1):
                if pos == 1:
                    text = token
                else:
                    idx, sep, text = token.partition(':')
                    if not sep or not idx.isdigit() or int(idx) < 1:
                        return lineno, pos, f"malformed index:value pair {token!r}"
                    if n_features is not None and int(idx) > n_features:
                        return lineno, pos, f"index {idx} exceeds the {n_features} features"
                try:
                    float(text)
                except ValueError:
                    return lineno, pos, f"non-numeric value {text!r}"
    return None, None, "unreadable sparse record"


def _read_sparse(path: str, n_features: Optional[int], allow_empty: bool) -> RawDataset:
    with open(path) as f:
        has_records = any(line.split("#", 1)[0].strip() for line in f)
    if not has_records:
        if allow_empty:
            return RawDataset(np.empty((0, n_features or 0)), np.empty(0), path)
        raise DataFormatError("file contains no records", path=path)
    try:
        matrix, labels = load_svmlight_file(path, n_features=n_features, zero_based=False)
    except ValueError:
        line, column, message = _locate_sparse_error(path, n_features)
        raise DataFormatError(message, path=path, line=line, column=column)
    return RawDataset(np.asarray(matrix.toarray(), dtype=np.float64),
                      np.asarray(labels, dtype=np.float64), path)


def ingest(path: str, fmt: str = "csv", delimiter: str = ",", header: bool = False,
           label_column: Optional[int] = -1, n_features: Optional[int] = None,
           allow_empty: bool = False) -> RawDataset:
    """
    Read a data file into a dense data set, keeping row order

    Args:
        path: File to read
        fmt: "csv" (delimiter-separated) or "sparse" ("label idx:val ...", 1-based indices)
        delimiter: CSV field separator
        header: Whether the CSV file starts with a header row
        label_column: CSV label column (negative counts from the end); None for feature-only files
        n_features: Dimension of sparse files; inferred from the largest index when None
        allow_empty: Return an empty data set instead of failing on an empty file

    Returns:
        RawDataset
    """
    if fmt == "csv":
        data = _read_csv(path, delimiter, header, label_column, allow_empty)
    elif fmt == "sparse":
        data = _read_sparse(path, n_features, allow_empty)
        if label_column is None:
            data = RawDataset(data.features, None, path)
    else:
        raise ValueError(f"unknown data format {fmt!r}")
    logger.info(f"Loaded {data.n} records with {data.d} features from {path}")
    return data


def scale_to_unit_box(raw: RawDataset) -> Tuple[TrainingSet, Scaling]:
    """Map every feature column and the label onto [-1, 1]; returns the data and the transform"""
    if raw.labels is None:
        raise ValueError("scaling for training needs labels")
    if raw.n < 1:
        raise ValueError("cannot scale an empty data set")
    scaling = Scaling.fit(raw.features, raw.labels)
    return scaling.apply(raw.features, raw.labels), scaling


def split(data, train_fraction: float, seed: int = 0):
    """Seeded shuffle, then the first round(fraction * n) rows train and the rest test"""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n = data.n
    n_train = int(round(train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"fraction {train_fraction} of {n} rows leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(order[:n_train]), data.subset(order[n_train:])


def make_sine_data(n: int, noise: float = 0.2, seed: int = 0) -> RawDataset:
    """y = sin(2 pi x) + N(0, noise^2) with x ~ U[0, 1]"""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    y = np.sin(2.0 * np.pi * x) + rng.normal(0.0, noise, size=n)
    return RawDataset(x.reshape(-1, 1), y)


def standard_normal_expectile(tau: float) -> float:
    """tau-expectile of N(0, 1) from tau E[(Z-e)+] = (1-tau) E[(e-Z)+]"""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly inside (0, 1), got {tau}")

    def first_order(e: float) -> float:
        upper = norm.pdf(e) - e * norm.sf(e)
        lower = e * norm.cdf(e) + norm.pdf(e)
        return tau * upper - (1.0 - tau) * lower

    return float(brentq(first_order, -10.0, 10.0, xtol=1e-14))


# ----------------------------------------------------------------------
# Grids
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid; lambdas strictly descending, gammas strictly ascending"""
    lambdas: np.ndarray
    gammas: np.ndarray

    def __post_init__(self):
        lambdas = np.asarray(self.lambdas, dtype=np.float64).reshape(-1)
        gammas = np.asarray(self.gammas, dtype=np.float64).reshape(-1)
        for name, values in (('lambdas', lambdas), ('gammas', gammas)):
            if values.size == 0:
                raise ValueError(f"{name} must not be empty")
            if not np.all(np.isfinite(values) & (values > 0)):
                raise ValueError(f"{name} must be positive and finite")
        if np.any(np.diff(lambdas) >= 0):
            raise ValueError("lambdas must be strictly descending")
        if np.any(np.diff(gammas) <= 0):
            raise ValueError("gammas must be strictly ascending")
        object.__setattr__(self, 'lambdas', lambdas)
        object.__setattr__(self, 'gammas', gammas)

    @classmethod
    def from_values(cls, lambdas: Sequence[float], gammas: Sequence[float]) -> "GridSpec":
        """Explicit lists in any order; duplicates removed"""
        return cls(np.unique(np.asarray(lambdas, dtype=np.float64))[::-1],
                   np.unique(np.asarray(gammas, dtype=np.float64)))

    @property
    def size(self) -> int:
        return self.lambdas.size * self.gammas.size


def default_grid(n: int, d: int, n_lambdas: int = 10, n_gammas: int = 10) -> GridSpec:
    """Geometric grid: lambda over [0.001/n, 1], gamma over [0.1 n^(-1/d), 0.2]"""
    if n < 1 or d < 1:
        raise ValueError(f"default grid needs n, d >= 1, got n={n}, d={d}")
    if n_lambdas < 1 or n_gammas < 1:
        raise ValueError("grid sizes must be >= 1")
    lambdas = np.geomspace(1.0, LAMBDA_LOW / n, n_lambdas)
    gammas = np.geomspace(GAMMA_LOW * n ** (-1.0 / d), GAMMA_HIGH, n_gammas)
    return GridSpec(lambdas, gammas)


def kernel_gamma_for(gamma: float, n_train: float) -> float:
    """Grid gamma converted to the kernel width used on a training set of size n_train"""
    return float(n_train * gamma)


# ----------------------------------------------------------------------
# Training and evaluation
# ----------------------------------------------------------------------

def train_model(data: TrainingSet, params: HyperParams, options: Optional[SolverOptions] = None,
                scaling: Optional[Scaling] = None, init: Optional[DualState] = None,
                knn: Optional[KnnIndex] = None, cache: Optional[KernelCache] = None,
                callback: Optional[IterationCallback] = None) -> Tuple[Model, TrainResult]:
    """
    Run the solver chosen by options.solver and params.wss and wrap the result as a Model

    The scan strategy and single-sample sets always run the 1D solver.
    """
    options = options or SolverOptions()
    use_1d = options.solver == "1d" or params.wss == WorkingSetStrategy.SCAN or data.n < 2
    if use_1d:
        result = train_1d(data, params, init=init, options=options, cache=cache, callback=callback)
    else:
        if params.wss == WorkingSetStrategy.WSS2 and knn is None:
            knn = build_knn(data.features, params.knn)
        result = train_2d(data, params, init=init, options=options, cache=cache, knn=knn,
                          callback=callback)
    return Model.from_state(result.state, data, scaling), result


def _validation_predictions(state: DualState, train: TrainingSet, points: np.ndarray,
                            clipped: bool) -> np.ndarray:
    values = cross_kernel(points, train.features, state.params.gamma) @ state.coefficients()
    if clipped:
        m = state.params.clip_m
        values = np.clip(values, -m, m)
    return values


def evaluate(model: Model, test: TrainingSet, tau: float, clipped: bool = False) -> float:
    """Mean ALS loss of the scaled-space residuals on a test set"""
    if test.n < 1:
        raise ValueError("evaluation needs a nonempty test set")
    predictions = model.predict_scaled(test.features, clipped=clipped)
    return als_risk(test.labels - predictions, tau)


# ----------------------------------------------------------------------
# Cross-validation
# ----------------------------------------------------------------------

@dataclass
class CvReport:
    """Per-cell CV results (mean over folds) and the winning cell"""
    cells: pd.DataFrame
    best_lambda: float
    best_gamma: float
    best_risk: float
    folds: int
    seed: int
    fold_rows: pd.DataFrame = field(default_factory=pd.DataFrame)

    @property
    def total_iterations(self) -> int:
        return int(self.cells['iterations'].sum())

    @property
    def total_seconds(self) -> float:
        return float(self.cells['seconds'].sum())


@dataclass(frozen=True)
class _Fold:
    index: int
    train: TrainingSet
    valid: TrainingSet
    knn: Optional[KnnIndex]


def _run_chain(fold: _Fold, gamma: float, grid: GridSpec, tau: float, n_train: float,
               base: dict, options: SolverOptions, warm_start: bool) -> List[dict]:
    """Train one fold at fixed gamma along the descending lambda path"""
    kernel_gamma = kernel_gamma_for(gamma, n_train)
    cache = KernelCache.build(fold.train.features, kernel_gamma, mode=options.kernel_mode,
                              budget=options.cache_rows,
                              full_matrix_max_n=options.full_matrix_max_n)
    rows = []
    previous: Optional[TrainResult] = None
    for lam in grid.lambdas:
        cost = 1.0 / (2.0 * n_train * lam)
        params = HyperParams(tau=tau, cost=cost, gamma=kernel_gamma, **base)
        init = None
        if warm_start and previous is not None:
            init = DualState.warm_start(previous.state, previous.state.params.cost, cost)
        _, result = train_model(fold.train, params, options, init=init, knn=fold.knn, cache=cache)
        predictions = _validation_predictions(result.state, fold.train, fold.valid.features,
                                              params.use_clipped_gap)
        risk = als_risk(fold.valid.labels - predictions, tau)
        rows.append({'fold': fold.index, 'lambda': float(lam), 'gamma': float(gamma),
                     'kernel_gamma': kernel_gamma, 'cost': cost, 'risk': risk,
                     'iterations': result.iterations, 'seconds': result.seconds,
                     'converged': result.converged})
        previous = result
    return rows


def cv_select(data: TrainingSet, tau: float, grid: GridSpec, folds: int = 5, seed: int = 0,
              options: Optional[SolverOptions] = None, threads: int = 1,
              warm_start: bool = True, **param_kwargs) -> CvReport:
    """
    k-fold cross-validation over the grid

    Fold training uses n_train = (k-1) n / k for both conversions:
    kernel width n_train * gamma and cost C = 1 / (2 n_train lambda).
    Each (fold, gamma) chain walks lambda from large to small, warm-starting
    every run from the previous one, and chains run on `threads` workers.

    Args:
        data: Scaled training set
        tau: Expectile level
        grid: Hyperparameter grid
        folds: Number of folds k
        seed: Fold assignment seed
        options: Solver options shared by all runs
        threads: Worker threads for the (fold, gamma) chains
        warm_start: Chain lambda runs through warm starts
        **param_kwargs: Further HyperParams fields (epsilon, clip_m, use_clipped_gap, wss, knn)

    Returns:
        CvReport; ties in mean risk go to the larger lambda, then the smaller gamma
    """
    if folds < 2:
        raise ValueError(f"cross-validation needs at least 2 folds, got {folds}")
    if data.n < folds:
        raise ValueError(f"{data.n} samples cannot fill {folds} folds")
    options = options or SolverOptions()
    base = dict(param_kwargs)
    wss = WorkingSetStrategy(base.get('wss', WorkingSetStrategy.WSS2))
    knn_count = int(base.get('knn', 15))
    n_train = (folds - 1) * data.n / folds

    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    fold_sets = []
    for index, (train_idx, valid_idx) in enumerate(splitter.split(data.features)):
        train = data.subset(train_idx)
        knn = None
        if options.solver == "2d" and wss == WorkingSetStrategy.WSS2 and train.n >= 2:
            knn = build_knn(train.features, knn_count)
        fold_sets.append(_Fold(index, train, data.subset(valid_idx), knn))

    logger.info(f"🚀 CV: {folds} folds x {grid.size} cells (tau={tau:g}, {threads} threads)")
    started = time.perf_counter()
    rows: List[dict] = []
    jobs = [(fold, gamma) for fold in fold_sets for gamma in grid.gammas]
    if threads <= 1:
        for fold, gamma in jobs:
            rows.extend(_run_chain(fold, gamma, grid, tau, n_train, base, options, warm_start))
    else:
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="CvWorker") as executor:
            futures = {executor.submit(_run_chain, fold, gamma, grid, tau, n_train, base,
                                       options, warm_start): (fold.index, gamma)
                       for fold, gamma in jobs}
            for future in as_completed(futures):
                fold_index, gamma = futures[future]
                try:
                    rows.extend(future.result())
                except Exception as e:
                    logger.error(f"CV chain fold={fold_index} gamma={gamma:g} failed: {e}")
                    raise

    fold_rows = (pd.DataFrame(rows)
                 .sort_values(['lambda', 'gamma', 'fold'], ascending=[False, True, True])
                 .reset_index(drop=True))
    cells = (fold_rows.groupby(['lambda', 'gamma'], sort=False)
             .agg(kernel_gamma=('kernel_gamma', 'first'), cost=('cost', 'first'),
                  risk=('risk', 'mean'), iterations=('iterations', 'sum'),
                  seconds=('seconds', 'sum'), converged=('converged', 'all'))
             .reset_index())
    ranked = cells.sort_values(['risk', 'lambda', 'gamma'], ascending=[True, False, True],
                               kind='mergesort')
    best = ranked.iloc[0]
    unconverged = int((~fold_rows['converged']).sum())
    if unconverged:
        logger.warning(f"⚠️ {unconverged} CV runs stopped above the gap threshold")
    logger.info(f"✅ CV done in {time.perf_counter() - started:.2f}s "
                f"({int(cells['iterations'].sum())} iterations, "
                f"{'warm' if warm_start else 'cold'} start): best lambda={best['lambda']:.6g}, "
                f"gamma={best['gamma']:.6g}, risk={best['risk']:.6g}")
    return CvReport(cells=cells, best_lambda=float(best['lambda']), best_gamma=float(best['gamma']),
                    best_risk=float(best['risk']), folds=folds, seed=seed, fold_rows=fold_rows)


def refit(data: TrainingSet, tau: float, report: CvReport, scaling: Optional[Scaling] = None,
          options: Optional[SolverOptions] = None, refit_gamma: str = "scaled",
          **param_kwargs) -> Tuple[Model, TrainResult]:
    """
    Train the selected cell on the whole training set

    C = 1/(2 n lambda). refit_gamma="scaled" converts the grid gamma with the
    full size n like the folds did; "raw" uses the grid gamma unchanged.
    """
    if refit_gamma not in ("scaled", "raw"):
        raise ValueError(f"refit_gamma must be 'scaled' or 'raw', got {refit_gamma!r}")
    gamma = report.best_gamma
    if refit_gamma == "scaled":
        gamma = kernel_gamma_for(gamma, data.n)
    params = HyperParams.from_lambda(data.n, report.best_lambda, tau=tau, gamma=gamma,
                                     **param_kwargs)
    return train_model(data, params, options, scaling=scaling)


# ----------------------------------------------------------------------
# Curves and benchmarks
# ----------------------------------------------------------------------

def expectile_curves(raw: RawDataset, taus: Sequence[float], lam: Optional[float] = None,
                     gamma: Optional[float] = None, points: int = 100,
                     feature: Optional[int] = None, sqrt_x: bool = False,
                     options: Optional[SolverOptions] = None, select: Optional[GridSpec] = None,
                     folds: int = 5, seed: int = 0, threads: int = 1,
                     refit_gamma: str = "scaled", **param_kwargs) -> pd.DataFrame:
    """
    One model per tau, evaluated on an evenly spaced grid over one feature

    Other features are held at their median. With sqrt_x the curve feature is
    replaced by its square root before training and the x column reports the
    transformed value. With `select` each tau picks (lambda, gamma) by CV,
    otherwise the given lambda and kernel gamma are used for all taus.

    Returns:
        DataFrame with column 'x' and one 'tau_<value>' column per tau
    """
    if raw.labels is None:
        raise ValueError("curves need labelled data")
    if points < 2:
        raise ValueError(f"curves need at least 2 grid points, got {points}")
    if len(taus) == 0:
        raise ValueError("at least one tau is required")
    if feature is None:
        if raw.d != 1:
            raise ValueError(f"data has {raw.d} features; designate the curve feature")
        feature = 0
    if not 0 <= feature < raw.d:
        raise ValueError(f"feature {feature} out of range for d={raw.d}")
    if select is None and (lam is None or gamma is None):
        raise ValueError("give lambda and gamma, or a grid to select them")

    features = raw.features.copy()
    if sqrt_x:
        if np.any(features[:, feature] < 0):
            raise ValueError("square-root transform needs a nonnegative curve feature")
        features[:, feature] = np.sqrt(features[:, feature])
    data, scaling = scale_to_unit_box(RawDataset(features, raw.labels, raw.path))

    xs = np.linspace(features[:, feature].min(), features[:, feature].max(), points)
    query = np.tile(np.median(features, axis=0), (points, 1))
    query[:, feature] = xs

    table = pd.DataFrame({'x': xs})
    for tau in taus:
        if select is not None:
            report = cv_select(data, tau, select, folds=folds, seed=seed, options=options,
                               threads=threads, **param_kwargs)
            model, result = refit(data, tau, report, scaling, options, refit_gamma, **param_kwargs)
        else:
            params = HyperParams.from_lambda(data.n, lam, tau=tau, gamma=gamma, **param_kwargs)
            model, result = train_model(data, params, options, scaling=scaling)
        if not result.converged:
            logger.warning(f"⚠️ curve for tau={tau:g} comes from an unconverged run")
        table[f"tau_{tau:g}"] = model.predict_batch(query)
    return table


@dataclass(frozen=True)
class BenchConfig:
    """One point of the benchmark configuration matrix"""
    solver: str
    wss: WorkingSetStrategy
    knn: int
    warm_start: bool
    clipped_gap: bool

    @property
    def label(self) -> dict:
        return {'solver': self.solver, 'wss': self.wss.value, 'knn': self.knn,
                'init': 'warm' if self.warm_start else 'cold',
                'gap': 'clipped' if self.clipped_gap else 'unclipped'}


def bench_configs(solvers: Sequence[str] = ("2d",), wss: Sequence[str] = ("wss2",),
                  knn: Sequence[int] = (15,), warm: Sequence[bool] = (True,),
                  clipped: Sequence[bool] = (False,)) -> List[BenchConfig]:
    """Cartesian product of the axes with settings that cannot matter collapsed"""
    configs: List[BenchConfig] = []
    for solver, strategy, k, w, c in itertools.product(solvers, wss, knn, warm, clipped):
        strategy = WorkingSetStrategy(strategy)
        if solver == "1d" or strategy == WorkingSetStrategy.SCAN:
            solver, strategy = "1d", WorkingSetStrategy.SCAN
        if strategy != WorkingSetStrategy.WSS2:
            k = 0
        config = BenchConfig(solver, strategy, int(k), bool(w), bool(c))
        if config not in configs:
            configs.append(config)
    return configs


def benchmark(datasets: Dict[str, TrainingSet], taus: Sequence[float],
              configs: Sequence[BenchConfig], grid: Optional[GridSpec] = None,
              folds: int = 5, seed: int = 0, options: Optional[SolverOptions] = None,
              threads: int = 1, epsilon: float = 1e-3, clip_m: float = 1.0) -> pd.DataFrame:
    """
    Grid-search cost per dataset, tau and configuration

    Every configuration runs the full CV grid search. Rows with scope 'cell'
    hold per-cell iterations and time summed over folds; rows with scope
    'total' aggregate the whole grid for one configuration.
    """
    options = options or SolverOptions()
    rows = []
    for name, data in datasets.items():
        cell_grid = grid or default_grid(data.n, data.d)
        for tau, config in itertools.product(taus, configs):
            run_options = replace(options, solver=config.solver)
            report = cv_select(data, tau, cell_grid, folds=folds, seed=seed, options=run_options,
                               threads=threads, warm_start=config.warm_start, epsilon=epsilon,
                               clip_m=clip_m, use_clipped_gap=config.clipped_gap,
                               wss=config.wss, knn=max(config.knn, 1))
            key = {'dataset': name, 'tau': tau, **config.label}
            for cell in report.cells.to_dict("records"):
                rows.append({**key, "scope": "cell", "lambda": cell["lambda"], "gamma": cell["gamma"],
                             "risk": cell["risk"], "iterations": int(cell["iterations"]),
                             "seconds": cell["seconds"]})
            rows.append({**key, 'scope': 'total', 'lambda': report.best_lambda,
                         'gamma': report.best_gamma, 'risk': report.best_risk,
                         'iterations': report.total_iterations, 'seconds': report.total_seconds})
            logger.info(f"Bench {name} tau={tau:g} {config.label}: "
                        f"{report.total_iterations} iterations, {report.total_seconds:.2f}s")
    return pd.DataFrame(rows)


def write_table(frame: pd.DataFrame, destination: TableDestination, delimiter: str = "\t"):
    """Delimiter-separated table with a header row and floats at 17 significant digits"""
    frame.to_csv(destination, sep=delimiter, index=False, float_format='%.17g')
