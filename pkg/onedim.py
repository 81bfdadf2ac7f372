"""
Single-coordinate SMO solver

Exact solution of the one-coordinate subproblem, its gain, the full gain scan
over all coordinates and the training loop built on top of them.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from core_types import ConsistencyError, HyperParams, SolverOptions, TrainingSet, TrainResult
from dual_state import DualState, GapReport
from kernel import KernelCache

logger = logging.getLogger(__name__)

IterationCallback = Callable[[DualState, int, GapReport], None]


@dataclass(frozen=True)
class BCoeffs:
    """Diagonal coefficients b1 = 1 + 1/(2 C tau), b2 = 1 + 1/(2 C (1 - tau))"""
    b1: float
    b2: float


@dataclass(frozen=True)
class Step1D:
    """Best single-coordinate move: index, alpha step, beta step, dual gain"""
    i: int
    delta: float
    eta: float
    gain: float


def b_coefficients(cost: float, tau: float) -> BCoeffs:
    if not cost > 0:
        raise ValueError(f"cost must be positive, got {cost}")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly inside (0, 1), got {tau}")
    a = 2.0 * cost * tau
    b = 2.0 * cost * (1.0 - tau)
    return BCoeffs(b1=(a + 1.0) / a, b2=(b + 1.0) / b)


def coeffs_of(state: DualState) -> BCoeffs:
    return b_coefficients(state.params.cost, state.params.tau)


def c_value(state: DualState, i: int, coeffs: Optional[BCoeffs] = None) -> float:
    """c_i = y_i - (K u without coordinate i)_i, read off the stored gradient"""
    coeffs = coeffs or coeffs_of(state)
    return float(state.grad_alpha[i] + coeffs.b1 * state.alpha[i] - state.beta[i])


def solve_1d(c, coeffs: BCoeffs):
    """
    Exact maximizer of the one-coordinate dual over alpha_i, beta_i >= 0

    The unconstrained stationary point is infeasible for c != 0, so the
    optimum sits on one of the two axes, chosen by the sign of c.
    Works elementwise on arrays.
    """
    alpha_plus = np.maximum(0.0, c / coeffs.b1)
    beta_plus = np.maximum(0.0, -c / coeffs.b2)
    if np.ndim(alpha_plus) == 0:
        return float(alpha_plus), float(beta_plus)
    return alpha_plus, beta_plus


def gain_1d(delta, eta, grad_a, grad_b, coeffs: BCoeffs):
    """W(alpha + delta e_i, beta + eta e_i) - W(alpha, beta)"""
    return (delta * (grad_a - 0.5 * coeffs.b1 * delta)
            + eta * (grad_b - 0.5 * coeffs.b2 * eta)
            + delta * eta)


def candidate_steps(state: DualState, coeffs: BCoeffs, lo: int = 0, hi: Optional[int] = None):
    """Exact 1D steps and gains for every coordinate in [lo, hi), vectorised"""
    sl = slice(lo, state.n if hi is None else hi)
    alpha, beta = state.alpha[sl], state.beta[sl]
    grad_a, grad_b = state.grad_alpha[sl], state.grad_beta[sl]
    c = grad_a + coeffs.b1 * alpha - beta
    alpha_plus, beta_plus = solve_1d(c, coeffs)
    delta = alpha_plus - alpha
    eta = beta_plus - beta
    return delta, eta, gain_1d(delta, eta, grad_a, grad_b, coeffs)


def best_direction_1d(state: DualState, lo: int = 0, hi: Optional[int] = None,
                      coeffs: Optional[BCoeffs] = None) -> Step1D:
    """
    Coordinate in [lo, hi) whose exact update gains the most

    Uses stored gradients only, no kernel access. Ties go to the lowest index.
    """
    coeffs = coeffs or coeffs_of(state)
    hi = state.n if hi is None else hi
    if hi <= lo:
        raise ValueError(f"empty coordinate range [{lo}, {hi})")
    delta, eta, gains = candidate_steps(state, coeffs, lo, hi)
    best = int(np.argmax(gains))
    gain = float(gains[best])
    if gain <= 0.0:
        # the zero step is always available
        return Step1D(i=lo + best, delta=0.0, eta=0.0, gain=0.0)
    return Step1D(i=lo + best, delta=float(delta[best]), eta=float(eta[best]), gain=gain)


def prepare_state(data: TrainingSet, params: HyperParams, init: Optional[DualState],
                  options: SolverOptions, cache: Optional[KernelCache]) -> DualState:
    """Cold start unless a state is handed in"""
    if init is not None:
        if init.n != data.n:
            raise ValueError(f"initial state has n={init.n}, data has n={data.n}")
        return init
    if cache is None:
        cache = KernelCache.build(data.features, params.gamma, mode=options.kernel_mode,
                                  budget=options.cache_rows,
                                  full_matrix_max_n=options.full_matrix_max_n)
    return DualState.cold_start(data, params, cache)


class ProgressGuard:
    """Debug checkpoints and progress logging shared by the training loops"""

    def __init__(self, state: DualState, options: SolverOptions, label: str):
        self.options = options
        self.label = label
        self.last_objective = state.objective() if options.debug else None

    def after_update(self, state: DualState, iteration: int, gap: GapReport):
        options = self.options
        if options.debug and iteration % options.debug_interval == 0:
            state.check_consistency()
            objective = state.objective()
            if objective < self.last_objective - 1e-10 * max(1.0, abs(self.last_objective)):
                raise ConsistencyError(
                    f"dual objective decreased from {self.last_objective:.12g} to {objective:.12g}")
            if gap.s < -1e-9 * max(1.0, abs(state.t_part)):
                raise ConsistencyError(f"negative duality gap {gap.s:.3e}")
            self.last_objective = objective
        if iteration % options.log_every == 0:
            logger.debug(f"{self.label}: iteration {iteration}, gap {gap.s:.6g} "
                         f"(threshold {gap.threshold:.6g})")


def finish(state: DualState, iterations: int, gap: GapReport, started: float,
           label: str) -> TrainResult:
    elapsed = time.perf_counter() - started
    converged = gap.stop
    if converged:
        logger.info(f"{label} converged: {iterations} iterations, gap {gap.s:.6g} "
                    f"<= {gap.threshold:.6g}, {elapsed:.3f}s")
    else:
        logger.warning(f"⚠️ {label} stopped after {iterations} iterations with gap "
                       f"{gap.s:.6g} > {gap.threshold:.6g}")
    return TrainResult(state=state, iterations=iterations, converged=converged,
                       gap=gap, seconds=elapsed)


def train_1d(data: TrainingSet, params: HyperParams, init: Optional[DualState] = None,
             options: Optional[SolverOptions] = None, cache: Optional[KernelCache] = None,
             callback: Optional[IterationCallback] = None) -> TrainResult:
    """
    Greedy single-coordinate ascent until S <= epsilon / (2 lambda)

    Args:
        data: Scaled training set
        params: Hyperparameters (tau, C, gamma, epsilon, gap variant)
        init: Starting state; cold start when None
        options: Iteration cap, debug checkpoints, kernel cache mode
        cache: Kernel cache to reuse across runs on the same data and gamma
        callback: Called after every update with (state, iteration, gap)

    Returns:
        TrainResult with converged=False when the iteration cap was hit
    """
    options = options or SolverOptions(solver="1d")
    started = time.perf_counter()
    state = prepare_state(data, params, init, options, cache)
    coeffs = coeffs_of(state)
    clipped = params.use_clipped_gap
    guard = ProgressGuard(state, options, "1D solver")

    gap = state.duality_gap(clipped)
    iterations = 0
    while not gap.stop and iterations < options.max_iter:
        step = best_direction_1d(state, coeffs=coeffs)
        if step.gain <= 0.0:
            logger.warning(f"1D solver: no ascent direction left with gap {gap.s:.6g}")
            break
        state.apply_update_1d(step.i, step.delta, step.eta)
        iterations += 1
        gap = state.duality_gap(clipped)
        if callback is not None:
            callback(state, iterations, gap)
        guard.after_update(state, iterations, gap)

    return finish(state, iterations, gap, started, "1D solver")
