"""
Two-coordinate SMO solver

Exact solution of the two-coordinate subproblem through the four boundary
cases, the 2D gain, the WSS1/WSS2 working-set rules and the training loop.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core_types import HyperParams, SolverOptions, TrainingSet, TrainResult, WorkingSetStrategy
from dual_state import DualState
from kernel import KernelCache, KnnIndex, build_knn
from onedim import (BCoeffs, IterationCallback, ProgressGuard, best_direction_1d,
                    coeffs_of, finish, gain_1d, prepare_state)

logger = logging.getLogger(__name__)

CASE_ZERO = 0


@dataclass(frozen=True)
class PairCoeffs:
    """Right-hand sides c_i, c_j and coupling k = K_ij of a 2D subproblem (scalars or arrays)"""
    c_i: float
    c_j: float
    k: float
    coeffs: BCoeffs


@dataclass(frozen=True)
class Step2D:
    i: int
    j: int
    delta_i: float
    eta_i: float
    delta_j: float
    eta_j: float
    gain: float
    case_id: int


@dataclass
class WssMemory:
    """Pair chosen in the previous iteration"""
    i_old: Optional[int] = None
    j_old: Optional[int] = None


def pair_determinant(b1, b2, k):
    """Determinant of the 4x4 stationarity system; positive for b1, b2 > 1 and |k| <= 1"""
    k2 = k * k
    return (b1 * b1 * (b2 * b2 - k2) - 2.0 * b1 * (b2 * k2 + b2 - 2.0 * k2)
            - (b2 - 2.0) ** 2 * k2 + 1.0)


def pair_coeffs(state: DualState, i: int, j: int, coeffs: Optional[BCoeffs] = None) -> PairCoeffs:
    """c_i = y_i - (K u without coordinates i and j)_i, from the gradients"""
    if i == j:
        raise ValueError(f"pair coefficients need i != j, got {i}")
    coeffs = coeffs or coeffs_of(state)
    k = state.cache.entry(i, j)
    u_i = state.alpha[i] - state.beta[i]
    u_j = state.alpha[j] - state.beta[j]
    c_i = state.grad_alpha[i] + coeffs.b1 * state.alpha[i] - state.beta[i] + u_j * k
    c_j = state.grad_alpha[j] + coeffs.b1 * state.alpha[j] - state.beta[j] + u_i * k
    return PairCoeffs(c_i=float(c_i), c_j=float(c_j), k=float(k), coeffs=coeffs)


def t_values(pc: PairCoeffs):
    """The four shared numerators T1..T4 of the boundary solutions"""
    b1, b2 = pc.coeffs.b1, pc.coeffs.b2
    t1 = pc.k * pc.c_j - b2 * pc.c_i
    t2 = pc.k * pc.c_i - b2 * pc.c_j
    t3 = b1 * pc.c_i - pc.k * pc.c_j
    t4 = b1 * pc.c_j - pc.k * pc.c_i
    return t1, t2, t3, t4


def pair_objective(pc: PairCoeffs, a_i, b_i, a_j, b_j):
    """Two-coordinate dual objective up to the constant of the fixed coordinates"""
    b1, b2 = pc.coeffs.b1, pc.coeffs.b2
    u_i, u_j = a_i - b_i, a_j - b_j
    return (pc.c_i * u_i + pc.c_j * u_j
            - 0.5 * (u_i * u_i + u_j * u_j + 2.0 * pc.k * u_i * u_j)
            - 0.5 * (b1 - 1.0) * (a_i * a_i + a_j * a_j)
            - 0.5 * (b2 - 1.0) * (b_i * b_i + b_j * b_j))


def _unwrap(value):
    arr = np.asarray(value)
    return float(arr) if arr.ndim == 0 else arr


def solve_2d(pc: PairCoeffs):
    """
    Exact maximizer of the 2D dual over the four nonnegative variables

    Case 1: alpha_i = alpha_j = 0       when T1 >= 0 and T2 >= 0
    Case 2: beta_i = beta_j = 0         when T3 >= 0 and T4 >= 0
    Case 3: alpha_i = beta_j = 0        when T2 <= 0 and T3 <= 0
    Case 4: beta_i = alpha_j = 0        when T1 <= 0 and T4 <= 0
    First match wins; c_i = c_j = 0 gives the zero solution (case 0).

    Returns:
        (alpha_i+, beta_i+, alpha_j+, beta_j+, case_id), elementwise for array input
    """
    b1, b2 = pc.coeffs.b1, pc.coeffs.b2
    c_i, c_j, k = np.asarray(pc.c_i, float), np.asarray(pc.c_j, float), np.asarray(pc.k, float)
    t1, t2, t3, t4 = t_values(PairCoeffs(c_i, c_j, k, pc.coeffs))
    det1 = b2 * b2 - k * k
    det2 = b1 * b1 - k * k
    det3 = k * k - b1 * b2

    case1 = (t1 >= 0) & (t2 >= 0)
    case2 = ~case1 & (t3 >= 0) & (t4 >= 0)
    case3 = ~(case1 | case2) & (t2 <= 0) & (t3 <= 0)
    case4 = ~(case1 | case2 | case3) & (t1 <= 0) & (t4 <= 0)
    case_id = np.select([case1, case2, case3, case4], [1, 2, 3, 4], default=-1)
    case_id = np.where((c_i == 0) & (c_j == 0), CASE_ZERO, case_id)

    zero = np.zeros_like(t1)
    a_i = np.select([case2, case4], [t3 / det2, t1 / det3], default=zero)
    b_i = np.select([case1, case3], [t1 / det1, t3 / det3], default=zero)
    a_j = np.select([case2, case3], [t4 / det2, t2 / det3], default=zero)
    b_j = np.select([case1, case4], [t2 / det1, t4 / det3], default=zero)

    uncovered = case_id < 0
    if np.any(uncovered):
        # rounding at a quadrant border; take the best clamped boundary candidate
        logger.debug(f"solve_2d: {int(np.sum(uncovered))} draws fell between cases")
        candidates = [
            (zero, t1 / det1, zero, t2 / det1),
            (t3 / det2, zero, t4 / det2, zero),
            (zero, t3 / det3, t2 / det3, zero),
            (t1 / det3, zero, zero, t4 / det3),
        ]
        pcv = PairCoeffs(c_i, c_j, k, pc.coeffs)
        clamped = [tuple(np.maximum(v, 0.0) for v in cand) for cand in candidates]
        scores = np.stack([pair_objective(pcv, *cand) for cand in clamped])
        pick = np.argmax(scores, axis=0)
        for pos, cand in enumerate(clamped):
            use = uncovered & (pick == pos)
            a_i = np.where(use, cand[0], a_i)
            b_i = np.where(use, cand[1], b_i)
            a_j = np.where(use, cand[2], a_j)
            b_j = np.where(use, cand[3], b_j)
            case_id = np.where(use, pos + 1, case_id)

    case_out = int(case_id) if np.ndim(case_id) == 0 else case_id.astype(int)
    return tuple(_unwrap(np.maximum(v, 0.0)) for v in (a_i, b_i, a_j, b_j)) + (case_out,)


def gain_2d(step_i: Tuple, step_j: Tuple, k, coeffs: BCoeffs):
    """
    W gain of a joint move; each step is (delta, eta, grad_alpha, grad_beta) at the old state
    """
    d_i, e_i, ga_i, gb_i = step_i
    d_j, e_j, ga_j, gb_j = step_j
    return (gain_1d(d_i, e_i, ga_i, gb_i, coeffs) + gain_1d(d_j, e_j, ga_j, gb_j, coeffs)
            - (d_i - e_i) * (d_j - e_j) * k)


def pair_step(state: DualState, i: int, j: int, coeffs: Optional[BCoeffs] = None) -> Step2D:
    """Exact optimal move on the pair (i, j) together with its gain"""
    coeffs = coeffs or coeffs_of(state)
    pc = pair_coeffs(state, i, j, coeffs)
    a_i, b_i, a_j, b_j, case_id = solve_2d(pc)
    d_i, e_i = a_i - state.alpha[i], b_i - state.beta[i]
    d_j, e_j = a_j - state.alpha[j], b_j - state.beta[j]
    gain = gain_2d((d_i, e_i, state.grad_alpha[i], state.grad_beta[i]),
                   (d_j, e_j, state.grad_alpha[j], state.grad_beta[j]), pc.k, coeffs)
    return Step2D(i=i, j=j, delta_i=float(d_i), eta_i=float(e_i), delta_j=float(d_j),
                  eta_j=float(e_j), gain=float(gain), case_id=int(case_id))


def partner_gains(state: DualState, i: int, partners: np.ndarray,
                  coeffs: Optional[BCoeffs] = None) -> np.ndarray:
    """2D gains of the pairs (i, p) for every p in partners, vectorised over partners"""
    coeffs = coeffs or coeffs_of(state)
    partners = np.asarray(partners, dtype=np.intp)
    k = state.cache.row(i)[partners]
    u = state.alpha - state.beta
    c_i = state.grad_alpha[i] + coeffs.b1 * state.alpha[i] - state.beta[i] + u[partners] * k
    c_j = (state.grad_alpha[partners] + coeffs.b1 * state.alpha[partners]
           - state.beta[partners] + u[i] * k)
    a_i, b_i, a_j, b_j, _ = solve_2d(PairCoeffs(c_i, c_j, k, coeffs))
    a_i, b_i, a_j, b_j = (np.atleast_1d(v) for v in (a_i, b_i, a_j, b_j))
    return gain_2d((a_i - state.alpha[i], b_i - state.beta[i],
                    state.grad_alpha[i], state.grad_beta[i]),
                   (a_j - state.alpha[partners], b_j - state.beta[partners],
                    state.grad_alpha[partners], state.grad_beta[partners]), k, coeffs)


def _lowest_best(gains: np.ndarray, indices: np.ndarray) -> int:
    best = np.max(gains)
    return int(np.min(indices[gains == best]))


def select_wss1(state: DualState, memory: WssMemory,
                coeffs: Optional[BCoeffs] = None) -> Tuple[int, int]:
    """
    Best 1D direction in each half of the index range, then the best pair
    among the new and the previously used directions
    """
    n = state.n
    if n < 2:
        raise ValueError(f"working set selection needs n >= 2, got {n}")
    coeffs = coeffs or coeffs_of(state)
    half = math.ceil(n / 2)
    i_new = best_direction_1d(state, 0, half, coeffs).i
    j_new = best_direction_1d(state, half, n, coeffs).i

    if memory.i_old is None or memory.j_old is None:
        chosen = (i_new, j_new)
    else:
        candidates = []
        for pair in ((i_new, j_new), (i_new, memory.j_old),
                     (memory.i_old, j_new), (memory.i_old, memory.j_old)):
            if pair[0] != pair[1] and pair not in candidates:
                candidates.append(pair)
        scored = [(pair_step(state, i, j, coeffs).gain, i, j) for i, j in candidates]
        scored.sort(key=lambda item: (-item[0], min(item[1], item[2]), max(item[1], item[2])))
        chosen = (scored[0][1], scored[0][2])

    memory.i_old, memory.j_old = chosen
    return chosen


def select_wss2(state: DualState, knn: KnnIndex, memory: WssMemory,
                coeffs: Optional[BCoeffs] = None) -> Tuple[int, int]:
    """
    Keep i from WSS1 and pair it with its best partner among its nearest neighbours

    The WSS1 pair stays in the running, so the chosen gain never drops below
    the best 1D gain even when i and all its neighbours are already optimal.
    """
    coeffs = coeffs or coeffs_of(state)
    i_star, j_wss1 = select_wss1(state, memory, coeffs)
    neighbors = np.asarray(knn.of(i_star), dtype=np.intp)
    if neighbors.size == 0:
        return i_star, j_wss1
    gains = partner_gains(state, i_star, neighbors, coeffs)
    j_star = _lowest_best(gains, neighbors)
    if np.max(gains) <= pair_step(state, i_star, j_wss1, coeffs).gain:
        j_star = j_wss1
    memory.i_old, memory.j_old = i_star, j_star
    return i_star, j_star


def best_pair_exhaustive(state: DualState, coeffs: Optional[BCoeffs] = None) -> Step2D:
    """O(n^2) search over all pairs; baseline for tests and benchmarks only"""
    coeffs = coeffs or coeffs_of(state)
    best = None
    for i in range(state.n - 1):
        partners = np.arange(i + 1, state.n)
        gains = partner_gains(state, i, partners, coeffs)
        j = _lowest_best(gains, partners)
        gain = float(np.max(gains))
        if best is None or gain > best[0]:
            best = (gain, i, j)
    return pair_step(state, best[1], best[2], coeffs)


def train_2d(data: TrainingSet, params: HyperParams, init: Optional[DualState] = None,
             options: Optional[SolverOptions] = None, cache: Optional[KernelCache] = None,
             knn: Optional[KnnIndex] = None,
             callback: Optional[IterationCallback] = None) -> TrainResult:
    """
    Pairwise SMO ascent until S <= epsilon / (2 lambda)

    The pair comes from WSS1 or WSS2 (params.wss); the k-NN index for WSS2 is
    built here when not supplied.
    """
    if data.n < 2:
        raise ValueError(f"the 2D solver needs n >= 2, got {data.n}")
    if params.wss == WorkingSetStrategy.SCAN:
        raise ValueError("the scan strategy runs the 1D solver; use train_1d")
    options = options or SolverOptions()
    started = time.perf_counter()
    state = prepare_state(data, params, init, options, cache)
    coeffs = coeffs_of(state)
    clipped = params.use_clipped_gap
    if params.wss == WorkingSetStrategy.WSS2 and knn is None:
        knn = build_knn(data.features, params.knn)
    label = f"2D solver ({params.wss.value})"
    guard = ProgressGuard(state, options, label)
    memory = WssMemory()

    gap = state.duality_gap(clipped)
    iterations = 0
    while not gap.stop and iterations < options.max_iter:
        if params.wss == WorkingSetStrategy.WSS2:
            i, j = select_wss2(state, knn, memory, coeffs)
        else:
            i, j = select_wss1(state, memory, coeffs)
        step = pair_step(state, i, j, coeffs)
        if step.gain <= 0.0:
            logger.warning(f"{label}: no ascent direction left with gap {gap.s:.6g}")
            break
        state.apply_update_2d(i, j, step.delta_i, step.eta_i, step.delta_j, step.eta_j)
        iterations += 1
        gap = state.duality_gap(clipped)
        if callback is not None:
            callback(state, iterations, gap)
        guard.after_update(state, iterations, gap)

    return finish(state, iterations, gap, started, label)
