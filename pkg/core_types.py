"""
Core domain types for kernel expectile regression
Training data, hyperparameters, solver options and the asymmetric least squares loss
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)


class DataFormatError(ValueError):
    """Malformed input record; names the file, line and column it came from"""

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ModelFormatError(ValueError):
    """Model document could not be parsed"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class ModelVersionError(ModelFormatError):
    """Model document carries a format version this code does not read"""


class ModelTruncatedError(ModelFormatError):
    """Model document ends before all announced records were read"""


class ConsistencyError(RuntimeError):
    """Incrementally maintained solver state disagrees with a from-scratch evaluation"""


class WorkingSetStrategy(str, Enum):
    """Direction selection rule used by the solvers"""
    SCAN = "scan"
    WSS1 = "wss1"
    WSS2 = "wss2"


@dataclass(frozen=True)
class TrainingSet:
    """Scaled features (n×d) and labels (n) - the data set D the solvers see"""
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2:
            raise ValueError(f"features must be a matrix, got shape {features.shape}")
        n, d = features.shape
        if n < 1 or d < 1:
            raise ValueError(f"training set needs n >= 1 and d >= 1, got n={n}, d={d}")
        if labels.shape[0] != n:
            raise ValueError(f"{n} feature rows but {labels.shape[0]} labels")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(labels))):
            raise ValueError("training set contains NaN or Inf entries")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "TrainingSet":
        idx = np.asarray(indices, dtype=np.intp)
        return TrainingSet(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class HyperParams:
    """
    Hyperparameters of one training run

    The cost C is stored; lambda is derived through C = 1/(2 n lambda).
    """
    tau: float
    cost: float
    gamma: float
    epsilon: float = 1e-3
    clip_m: float = 1.0
    use_clipped_gap: bool = False
    wss: WorkingSetStrategy = WorkingSetStrategy.WSS2
    knn: int = 15

    def __post_init__(self):
        tau = float(self.tau)
        if not (math.isfinite(tau) and 0.0 < tau < 1.0):
            raise ValueError(f"tau must lie strictly inside (0, 1), got {self.tau}")
        for name in ('cost', 'gamma', 'epsilon', 'clip_m'):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be a positive finite number, got {getattr(self, name)}")
            object.__setattr__(self, name, value)
        if int(self.knn) < 1:
            raise ValueError(f"knn must be >= 1, got {self.knn}")
        object.__setattr__(self, 'tau', tau)
        object.__setattr__(self, 'knn', int(self.knn))
        object.__setattr__(self, 'wss', WorkingSetStrategy(self.wss))

    @classmethod
    def from_lambda(cls, n: int, lam: float, **kwargs: Any) -> "HyperParams":
        """Build parameters from the regularization weight lambda for a data set of size n"""
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        if not (math.isfinite(lam) and lam > 0.0):
            raise ValueError(f"lambda must be a positive finite number, got {lam}")
        return cls(cost=1.0 / (2.0 * n * lam), **kwargs)

    def lam(self, n: int) -> float:
        return 1.0 / (2.0 * n * self.cost)

    def with_cost(self, cost: float) -> "HyperParams":
        return replace(self, cost=cost)


@dataclass(frozen=True)
class SolverOptions:
    """Knobs that change how a run is computed but not what it converges to"""
    solver: str = "2d"
    max_iter: int = 10_000_000
    debug: bool = False
    debug_interval: int = 1000
    log_every: int = 100_000
    kernel_mode: str = "auto"
    cache_rows: int = 2000
    full_matrix_max_n: int = 8000

    def __post_init__(self):
        if self.solver not in ("1d", "2d"):
            raise ValueError(f"solver must be '1d' or '2d', got {self.solver!r}")
        if self.kernel_mode not in ("auto", "full", "lru"):
            raise ValueError(f"kernel_mode must be auto, full or lru, got {self.kernel_mode!r}")
        if self.max_iter < 0:
            raise ValueError(f"max_iter must be >= 0, got {self.max_iter}")
        if self.debug_interval < 1 or self.log_every < 1:
            raise ValueError("debug_interval and log_every must be >= 1")
        if self.cache_rows < 2:
            raise ValueError(f"cache_rows must be >= 2, got {self.cache_rows}")


@dataclass
class TrainResult:
    """Outcome of one solver run"""
    state: Any
    iterations: int
    converged: bool
    gap: Any
    seconds: float = 0.0


def _check_tau(tau: float):
    if not (math.isfinite(tau) and 0.0 < tau < 1.0):
        raise ValueError(f"tau must lie strictly inside (0, 1), got {tau}")


def als_loss(t, tau: float):
    """
    Asymmetric least squares loss

    Args:
        t: Residual y - f(x), scalar or array
        tau: Expectile level in (0, 1)

    Returns:
        tau * t^2 for t >= 0 and (1 - tau) * t^2 for t < 0
    """
    _check_tau(tau)
    t_arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("residual must be finite")
    weight = np.where(t_arr >= 0.0, tau, 1.0 - tau)
    loss = weight * t_arr * t_arr
    return float(loss) if loss.ndim == 0 else loss


def als_risk(residuals, tau: float) -> float:
    """Empirical ALS risk: the mean loss over the residual vector"""
    values = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("als_risk needs at least one residual")
    return float(np.mean(als_loss(values, tau)))


def sample_expectile(values, tau: float, xtol: float = 1e-12) -> float:
    """
    Constant minimizer of the empirical ALS risk

    Solved by bracketing root search on the first-order condition
    tau * sum(max(y - e, 0)) = (1 - tau) * sum(max(e - y, 0)).
    """
    _check_tau(tau)
    y = np.asarray(values, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("sample_expectile needs at least one value")
    lo, hi = float(np.min(y)), float(np.max(y))
    if hi - lo <= 0.0:
        return lo

    def first_order(e: float) -> float:
        return tau * np.sum(np.maximum(y - e, 0.0)) - (1.0 - tau) * np.sum(np.maximum(e - y, 0.0))

    return float(brentq(first_order, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps))
