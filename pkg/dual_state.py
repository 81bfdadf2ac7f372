"""
Dual optimization state of the offset-free expectile SVM

Holds alpha, beta, the gradients of the dual objective W and the T part of the
duality gap, all maintained incrementally in O(n) per coordinate update.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core_types import ConsistencyError, HyperParams, TrainingSet
from kernel import KernelCache

logger = logging.getLogger(__name__)

# Post-step dual variables this close to zero are snapped onto the boundary
FEASIBILITY_SNAP = 1e-14


@dataclass(frozen=True)
class GapReport:
    """Duality gap S = T + C*E at the current state, with the stopping threshold"""
    t_part: float
    e_part: float
    s: float
    threshold: float
    clipped: bool

    @property
    def stop(self) -> bool:
        return self.s <= self.threshold


class DualState:
    """
    alpha, beta >= 0 and the incrementally maintained quantities

        grad_alpha[i] =  y_i - (K u)_i - alpha_i / (2 C tau)
        grad_beta[i]  = -y_i + (K u)_i - beta_i / (2 C (1 - tau))
        t_part        = <u, K u> - <u, y> + <alpha, alpha>/(4 C tau) + <beta, beta>/(4 C (1 - tau))

    with u = alpha - beta. A state is owned by a single training session.
    """

    def __init__(self, alpha: np.ndarray, beta: np.ndarray,
                 grad_alpha: np.ndarray, grad_beta: np.ndarray, t_part: float,
                 labels: np.ndarray, cache: KernelCache, params: HyperParams,
                 iter_count: int = 0):
        self.alpha = alpha
        self.beta = beta
        self.grad_alpha = grad_alpha
        self.grad_beta = grad_beta
        self.t_part = float(t_part)
        self.labels = labels
        self.cache = cache
        self.params = params
        self.iter_count = iter_count
        self._set_cost_factors()

    def _set_cost_factors(self):
        c, tau = self.params.cost, self.params.tau
        self.inv_a = 1.0 / (2.0 * c * tau)
        self.inv_b = 1.0 / (2.0 * c * (1.0 - tau))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    # ------------------------------------------------------------------
    # Initialization
    # ------------------------------------------------------------------

    @classmethod
    def cold_start(cls, data: TrainingSet, params: HyperParams,
                   cache: Optional[KernelCache] = None) -> "DualState":
        """alpha = beta = 0; the gradients reduce to +y and -y and T = 0"""
        if cache is None:
            cache = KernelCache.build(data.features, params.gamma)
        if cache.n != data.n:
            raise ValueError(f"kernel cache covers {cache.n} points, data has {data.n}")
        y = np.array(data.labels, dtype=np.float64)
        return cls(alpha=np.zeros(data.n), beta=np.zeros(data.n),
                   grad_alpha=y.copy(), grad_beta=-y,
                   t_part=0.0, labels=data.labels, cache=cache, params=params)

    @classmethod
    def warm_start(cls, prev: "DualState", c_old: float, c_new: float,
                   data: Optional[TrainingSet] = None) -> "DualState":
        """
        Recycle a solution trained at cost c_old as the start for cost c_new

        Only the diagonal regularization terms depend on C, so gradients and T
        are shifted instead of recomputed.
        """
        if data is not None and data.n != prev.n:
            raise ValueError(f"warm start from n={prev.n} state onto n={data.n} data")
        if not (c_new > 0 and math.isfinite(c_new)):
            raise ValueError(f"c_new must be positive, got {c_new}")
        if not math.isclose(c_old, prev.params.cost, rel_tol=1e-12):
            raise ValueError(f"c_old={c_old} does not match the state's cost {prev.params.cost}")

        tau = prev.params.tau
        shift = 1.0 / c_old - 1.0 / c_new
        alpha, beta = prev.alpha.copy(), prev.beta.copy()
        grad_alpha = prev.grad_alpha + alpha / (2.0 * tau) * shift
        grad_beta = prev.grad_beta + beta / (2.0 * (1.0 - tau)) * shift
        t_part = prev.t_part - 0.25 * shift * float(
            np.dot(alpha, alpha) / tau + np.dot(beta, beta) / (1.0 - tau))
        return cls(alpha=alpha, beta=beta, grad_alpha=grad_alpha, grad_beta=grad_beta,
                   t_part=t_part, labels=prev.labels, cache=prev.cache,
                   params=prev.params.with_cost(c_new))

    def copy(self) -> "DualState":
        return DualState(self.alpha.copy(), self.beta.copy(), self.grad_alpha.copy(),
                         self.grad_beta.copy(), self.t_part, self.labels, self.cache,
                         self.params, self.iter_count)

    # ------------------------------------------------------------------
    # Updates
    # ------------------------------------------------------------------

    def _t_decrement(self, i: int, delta: float, eta: float) -> float:
        """Decrease of T when alpha_i, beta_i move by (delta, eta), other coordinates fixed"""
        step = delta - eta
        f_i = self.labels[i] - self.grad_alpha[i] - self.alpha[i] * self.inv_a
        increase = (2.0 * step * f_i + step * step - step * self.labels[i]
                    + (2.0 * self.alpha[i] * delta + delta * delta) * self.inv_a * 0.5
                    + (2.0 * self.beta[i] * eta + eta * eta) * self.inv_b * 0.5)
        return -increase

    def _landed(self, value: float, what: str, i: int) -> float:
        if value >= 0.0:
            return value
        if value > -FEASIBILITY_SNAP:
            return 0.0
        raise ValueError(f"update leaves {what}[{i}] = {value:.3e} < 0")

    def apply_update_1d(self, i: int, delta: float, eta: float) -> "DualState":
        """alpha_i += delta, beta_i += eta and refresh gradients and T with one kernel row"""
        if not 0 <= i < self.n:
            raise IndexError(f"coordinate {i} out of range for n={self.n}")
        new_alpha = self._landed(self.alpha[i] + delta, 'alpha', i)
        new_beta = self._landed(self.beta[i] + eta, 'beta', i)
        delta, eta = new_alpha - self.alpha[i], new_beta - self.beta[i]
        if delta == 0.0 and eta == 0.0:
            return self

        self.t_part -= self._t_decrement(i, delta, eta)
        shift = (delta - eta) * self.cache.row(i)
        self.grad_alpha -= shift
        self.grad_beta += shift
        self.grad_alpha[i] -= delta * self.inv_a
        self.grad_beta[i] -= eta * self.inv_b
        self.alpha[i] = new_alpha
        self.beta[i] = new_beta
        self.iter_count += 1
        return self

    def apply_update_2d(self, i: int, j: int, d_i: float, e_i: float,
                        d_j: float, e_j: float) -> "DualState":
        """Joint update of coordinates i and j"""
        if i == j:
            raise ValueError(f"2D update needs two distinct coordinates, got i = j = {i}")
        for k in (i, j):
            if not 0 <= k < self.n:
                raise IndexError(f"coordinate {k} out of range for n={self.n}")
        new_ai = self._landed(self.alpha[i] + d_i, 'alpha', i)
        new_bi = self._landed(self.beta[i] + e_i, 'beta', i)
        new_aj = self._landed(self.alpha[j] + d_j, 'alpha', j)
        new_bj = self._landed(self.beta[j] + e_j, 'beta', j)
        d_i, e_i = new_ai - self.alpha[i], new_bi - self.beta[i]
        d_j, e_j = new_aj - self.alpha[j], new_bj - self.beta[j]
        if d_i == 0.0 and e_i == 0.0 and d_j == 0.0 and e_j == 0.0:
            return self

        step_i, step_j = d_i - e_i, d_j - e_j
        k_ij = self.cache.entry(i, j)
        self.t_part -= (self._t_decrement(i, d_i, e_i) + self._t_decrement(j, d_j, e_j)
                        - 2.0 * step_i * step_j * k_ij)
        for k, step in ((i, step_i), (j, step_j)):
            if step != 0.0:
                shift = step * self.cache.row(k)
                self.grad_alpha -= shift
                self.grad_beta += shift
        self.grad_alpha[i] -= d_i * self.inv_a
        self.grad_beta[i] -= e_i * self.inv_b
        self.grad_alpha[j] -= d_j * self.inv_a
        self.grad_beta[j] -= e_j * self.inv_b
        self.alpha[i], self.beta[i] = new_ai, new_bi
        self.alpha[j], self.beta[j] = new_aj, new_bj
        self.iter_count += 1
        return self

    # ------------------------------------------------------------------
    # Gap evaluation
    # ------------------------------------------------------------------

    def coefficients(self) -> np.ndarray:
        return self.alpha - self.beta

    def fitted_values(self) -> np.ndarray:
        """f(x_i) = (K u)_i, read off the gradients"""
        return self.labels - self.grad_alpha - self.alpha * self.inv_a

    def slacks(self, i: Optional[int] = None, clipped: bool = False):
        """
        Primal slacks (xi_plus, xi_minus) for sample i, or for all samples when i is None

        The clipped variant measures the residual against f clamped to [-M, M].
        """
        if i is None:
            fitted = self.fitted_values()
            y = self.labels
        else:
            fitted = self.labels[i] - self.grad_alpha[i] - self.alpha[i] * self.inv_a
            y = self.labels[i]
        if clipped:
            m = self.params.clip_m
            fitted = np.clip(fitted, -m, m)
        residual = y - fitted
        xi_plus = np.maximum(0.0, residual)
        xi_minus = np.maximum(0.0, -residual)
        if i is not None:
            return float(xi_plus), float(xi_minus)
        return xi_plus, xi_minus

    def threshold(self) -> float:
        """epsilon / (2 lambda) with lambda = 1 / (2 n C)"""
        return self.params.epsilon * self.n * self.params.cost

    def duality_gap(self, clipped: bool = False) -> GapReport:
        xi_plus, xi_minus = self.slacks(clipped=clipped)
        tau = self.params.tau
        e_part = float(tau * np.dot(xi_plus, xi_plus) + (1.0 - tau) * np.dot(xi_minus, xi_minus))
        s = self.t_part + self.params.cost * e_part
        return GapReport(t_part=self.t_part, e_part=e_part, s=s,
                         threshold=self.threshold(), clipped=clipped)

    # ------------------------------------------------------------------
    # From-scratch evaluation
    # ------------------------------------------------------------------

    def objective(self) -> float:
        """W(alpha, beta) evaluated directly with one K-vector product"""
        u = self.coefficients()
        ku = self.cache.matvec(u)
        return float(np.dot(u, self.labels) - 0.5 * np.dot(u, ku)
                     - 0.5 * self.inv_a * np.dot(self.alpha, self.alpha)
                     - 0.5 * self.inv_b * np.dot(self.beta, self.beta))

    def recompute(self) -> Tuple[np.ndarray, np.ndarray, float]:
        """Gradients and T computed directly from alpha and beta"""
        u = self.coefficients()
        ku = self.cache.matvec(u)
        grad_alpha = self.labels - ku - self.alpha * self.inv_a
        grad_beta = -self.labels + ku - self.beta * self.inv_b
        t_part = float(np.dot(u, ku) - np.dot(u, self.labels)
                       + 0.5 * self.inv_a * np.dot(self.alpha, self.alpha)
                       + 0.5 * self.inv_b * np.dot(self.beta, self.beta))
        return grad_alpha, grad_beta, t_part

    def check_consistency(self, rtol: float = 1e-6, atol: float = 1e-9):
        """Raise ConsistencyError when the incremental state has drifted from the direct one"""
        grad_alpha, grad_beta, t_part = self.recompute()
        scale = max(1.0, float(np.max(np.abs(self.labels))), abs(t_part))
        checks = (
            ('grad_alpha', self.grad_alpha, grad_alpha),
            ('grad_beta', self.grad_beta, grad_beta),
            ('t_part', np.array([self.t_part]), np.array([t_part])),
        )
        for name, kept, fresh in checks:
            err = float(np.max(np.abs(kept - fresh))) if kept.size else 0.0
            if err > rtol * scale + atol:
                raise ConsistencyError(
                    f"{name} drifted by {err:.3e} after {self.iter_count} updates")
        total = self.grad_alpha + self.grad_beta
        expected = -self.alpha * self.inv_a - self.beta * self.inv_b
        err = float(np.max(np.abs(total - expected))) if total.size else 0.0
        if err > rtol * scale + atol:
            raise ConsistencyError(f"gradient sum rule violated by {err:.3e}")
        if np.any(self.alpha < 0) or np.any(self.beta < 0):
            raise ConsistencyError("negative dual variable")
