"""
Gaussian RBF kernel evaluation, kernel-row caching and the exact k-NN index
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

FULL_MATRIX = "full"
ROW_LRU = "lru"

# Rows per distance block when scanning for neighbours
_KNN_BLOCK_ROWS = 512


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def gauss_kernel(x, x2, gamma: float) -> float:
    """k(x, x2) = exp(-gamma^2 * ||x - x2||^2)"""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(x2, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    sq = cdist(a.reshape(1, -1), b.reshape(1, -1), 'sqeuclidean')[0, 0]
    return float(np.exp(-(gamma * gamma) * sq))


def cross_kernel(a, b, gamma: float) -> np.ndarray:
    """Rectangular kernel block K[r, s] = k(a_r, b_s)"""
    left, right = _as_points(a), _as_points(b)
    if left.shape[1] != right.shape[1]:
        raise ValueError(f"dimension mismatch: {left.shape[1]} vs {right.shape[1]}")
    return np.exp(-(gamma * gamma) * cdist(left, right, 'sqeuclidean'))


class KernelCache:
    """
    Serves rows of the Gram matrix of the training points

    FullMatrix mode precomputes all of K; RowLRU mode computes rows on demand
    and keeps at most `budget` of them, evicting the least recently used.
    Both modes evaluate every entry with the same expression, so solvers see
    identical numbers whichever mode is active.
    """

    def __init__(self, points, gamma: float, mode: str = FULL_MATRIX, budget: int = 2000):
        if gamma <= 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        if mode not in (FULL_MATRIX, ROW_LRU):
            raise ValueError(f"unknown kernel cache mode {mode!r}")
        if mode == ROW_LRU and budget < 1:
            raise ValueError(f"row cache budget must be >= 1, got {budget}")
        self.points = _as_points(points)
        self.gamma = float(gamma)
        self.mode = mode
        self.budget = int(budget)
        self.stats: Dict[str, int] = {'hits': 0, 'misses': 0, 'evictions': 0}
        self._rows: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self._matrix = None
        if mode == FULL_MATRIX:
            self._matrix = cross_kernel(self.points, self.points, self.gamma)
            self._matrix.setflags(write=False)
            logger.debug(f"Kernel matrix built: n={self.n}, gamma={self.gamma:g}")

    @classmethod
    def build(cls, points, gamma: float, mode: str = "auto", budget: int = 2000,
              full_matrix_max_n: int = 8000) -> "KernelCache":
        """Pick FullMatrix for n <= full_matrix_max_n unless a mode is forced"""
        n = _as_points(points).shape[0]
        if mode == "auto":
            mode = FULL_MATRIX if n <= full_matrix_max_n else ROW_LRU
        return cls(points, gamma, mode=mode, budget=budget)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _compute_row(self, i: int) -> np.ndarray:
        return cross_kernel(self.points[i:i + 1], self.points, self.gamma)[0]

    def row(self, i: int) -> np.ndarray:
        """Row i of K (read-only view)"""
        if not 0 <= i < self.n:
            raise IndexError(f"kernel row {i} out of range for n={self.n}")
        if self._matrix is not None:
            self.stats['hits'] += 1
            return self._matrix[i]

        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            self.stats['hits'] += 1
            return cached

        self.stats['misses'] += 1
        values = self._compute_row(i)
        values.setflags(write=False)
        self._rows[i] = values
        if len(self._rows) > self.budget:
            self._rows.popitem(last=False)
            self.stats['evictions'] += 1
        return values

    def entry(self, i: int, j: int) -> float:
        if self._matrix is not None:
            return float(self._matrix[i, j])
        cached = self._rows.get(i)
        if cached is not None:
            return float(cached[j])
        cached = self._rows.get(j)
        if cached is not None:
            return float(cached[i])
        return float(cross_kernel(self.points[i:i + 1], self.points[j:j + 1], self.gamma)[0, 0])

    def matvec(self, v) -> np.ndarray:
        """K @ v without touching the row cache (debug checks and oracles)"""
        vec = np.asarray(v, dtype=np.float64)
        if self._matrix is not None:
            return self._matrix @ vec
        out = np.empty(self.n)
        for start in range(0, self.n, _KNN_BLOCK_ROWS):
            stop = min(start + _KNN_BLOCK_ROWS, self.n)
            out[start:stop] = cross_kernel(self.points[start:stop], self.points, self.gamma) @ vec
        return out


@dataclass(frozen=True)
class KnnIndex:
    """For every training point, the indices of its nearest other points"""
    neighbors: np.ndarray
    k: int

    def of(self, i: int) -> np.ndarray:
        return self.neighbors[i]


def build_knn(points, n_neighbors: int) -> KnnIndex:
    """
    Exact Euclidean k-nearest-neighbour lists

    Lists exclude the point itself, hold min(N, n-1) entries sorted by
    ascending distance, and break distance ties towards the lower index.
    """
    if n_neighbors < 1:
        raise ValueError(f"neighbour count must be >= 1, got {n_neighbors}")
    pts = _as_points(points)
    n = pts.shape[0]
    width = min(int(n_neighbors), n - 1)
    neighbors = np.empty((n, max(width, 0)), dtype=np.intp)
    if width == 0:
        return KnnIndex(neighbors=neighbors, k=int(n_neighbors))

    for start in range(0, n, _KNN_BLOCK_ROWS):
        stop = min(start + _KNN_BLOCK_ROWS, n)
        dist = cdist(pts[start:stop], pts, 'sqeuclidean')
        rows = np.arange(stop - start)
        dist[rows, rows + start] = np.inf
        # stable sort keeps equal distances in index order
        order = np.argsort(dist, axis=1, kind='stable')
        neighbors[start:stop] = order[:, :width]

    neighbors.setflags(write=False)
    logger.debug(f"k-NN index built: n={n}, k={width}")
    return KnnIndex(neighbors=neighbors, k=int(n_neighbors))
