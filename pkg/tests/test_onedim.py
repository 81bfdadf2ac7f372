import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize_scalar

from core_types import ConsistencyError, SolverOptions, TrainingSet
from dual_state import DualState
from instances import (coordinate_ascent_oracle, dual_objective, one_sample, params_for,
                       random_set, random_state)
from onedim import (BCoeffs, b_coefficients, best_direction_1d, c_value, candidate_steps,
                    coeffs_of, gain_1d, solve_1d, train_1d)


def one_dim_objective(a, b, c, coeffs):
    """Restriction of the dual to one coordinate, up to a constant"""
    u = a - b
    return c * u - 0.5 * u * u - 0.5 * (coeffs.b1 - 1) * a * a - 0.5 * (coeffs.b2 - 1) * b * b


class TestCoefficients:

    def test_examples(self):
        assert_allclose(b_coefficients(0.5, 0.5).b1, 3.0)
        assert_allclose(b_coefficients(0.5, 0.5).b2, 3.0)
        assert_allclose(b_coefficients(1.0, 0.25).b1, 3.0)
        assert_allclose(b_coefficients(1.0, 0.25).b2, 5.0 / 3.0)
        assert_allclose(b_coefficients(10.0, 0.9).b1, 19.0 / 18.0)
        assert_allclose(b_coefficients(10.0, 0.9).b2, 1.5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            b_coefficients(0.0, 0.5)
        with pytest.raises(ValueError):
            b_coefficients(1.0, 1.0)


class TestSolve1D:

    def test_examples(self):
        assert solve_1d(0.0, b_coefficients(0.5, 0.5)) == (0.0, 0.0)
        assert_allclose(solve_1d(3.0, b_coefficients(0.5, 0.5)), (1.0, 0.0))
        assert_allclose(solve_1d(-2.0, b_coefficients(1.0, 0.25)), (0.0, 1.2))

    def test_complementarity(self):
        coeffs = b_coefficients(0.7, 0.3)
        alpha, beta = solve_1d(np.linspace(-5, 5, 41), coeffs)
        assert np.all(alpha * beta == 0.0)
        assert np.all(alpha >= 0) and np.all(beta >= 0)

    def test_matches_bounded_search(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            c = rng.uniform(-10, 10)
            b1, b2 = rng.uniform(1.0 + 1e-3, 20.0, size=2)
            coeffs = BCoeffs(b1=b1, b2=b2)
            alpha, beta = solve_1d(c, coeffs)
            # on each axis the restriction is a concave parabola in one variable
            best_a = minimize_scalar(lambda a: -one_dim_objective(a, 0.0, c, coeffs),
                                     bounds=(0.0, 20.0), method='bounded',
                                     options={'xatol': 1e-12})
            best_b = minimize_scalar(lambda b: -one_dim_objective(0.0, b, c, coeffs),
                                     bounds=(0.0, 20.0), method='bounded',
                                     options={'xatol': 1e-12})
            best = max(-best_a.fun, -best_b.fun)
            assert_allclose(one_dim_objective(alpha, beta, c, coeffs), best, atol=1e-9)


class TestGain:

    def test_zero_step(self):
        assert gain_1d(0.0, 0.0, 2.0, -1.0, b_coefficients(1.0, 0.5)) == 0.0

    def test_one_sample(self):
        assert_allclose(gain_1d(1.0, 0.0, 3.0, -3.0, b_coefficients(0.5, 0.5)), 1.5)

    def test_symmetry(self):
        coeffs = b_coefficients(1.0, 0.25)
        swapped = BCoeffs(b1=coeffs.b2, b2=coeffs.b1)
        assert_allclose(gain_1d(0.3, 0.7, 1.1, -0.4, coeffs),
                        gain_1d(0.7, 0.3, -0.4, 1.1, swapped))

    def test_matches_objective_difference(self):
        data = random_set(20, 2, seed=1)
        params = params_for(tau=0.35, cost=1.3)
        state = random_state(data, params, seed=4)
        coeffs = coeffs_of(state)
        delta, eta, gains = candidate_steps(state, coeffs)
        before = dual_objective(data, params, state.alpha, state.beta)
        for i in (0, 7, 13):
            alpha, beta = state.alpha.copy(), state.beta.copy()
            alpha[i] += delta[i]
            beta[i] += eta[i]
            after = dual_objective(data, params, alpha, beta)
            assert_allclose(gains[i], after - before, atol=1e-9)


class TestDirection:

    def test_c_value_at_zero_state(self):
        data = random_set(6, 1, seed=2)
        state = DualState.cold_start(data, params_for())
        assert_allclose([c_value(state, i) for i in range(6)], data.labels)

    def test_c_value_at_one_sample_optimum(self):
        state = DualState.cold_start(one_sample(), params_for(tau=0.5, cost=0.5))
        state.apply_update_1d(0, 1.0, 0.0)
        assert_allclose(c_value(state, 0), 3.0)

    def test_best_direction_example(self):
        data = TrainingSet(np.array([[0.0], [5.0]]), np.array([3.0, 0.1]))
        state = DualState.cold_start(data, params_for(tau=0.5, cost=0.5))
        step = best_direction_1d(state)
        assert step.i == 0
        assert_allclose(step.gain, 1.5)
        _, _, gains = candidate_steps(state, coeffs_of(state))
        assert_allclose(gains[1], 0.1 / 3.0 * (0.1 - 0.05), rtol=1e-12)

    def test_tie_goes_to_lowest_index(self):
        data = TrainingSet(np.array([[0.0], [0.0]]), np.array([1.0, 1.0]))
        step = best_direction_1d(DualState.cold_start(data, params_for()))
        assert step.i == 0

    def test_range(self):
        data = random_set(10, 1, seed=3)
        state = DualState.cold_start(data, params_for())
        step = best_direction_1d(state, 5, 10)
        assert 5 <= step.i < 10
        with pytest.raises(ValueError):
            best_direction_1d(state, 4, 4)

    def test_converged_state_has_no_gain(self):
        result = train_1d(one_sample(), params_for(tau=0.5, cost=0.5))
        assert best_direction_1d(result.state).gain < 1e-12


class TestTrain1D:

    def test_one_sample(self):
        result = train_1d(one_sample(), params_for(tau=0.5, cost=0.5))
        assert result.converged
        assert result.iterations == 1
        assert_allclose(result.state.alpha, [1.0])
        assert_allclose(result.gap.s, 0.0, atol=1e-12)

    def test_zero_labels(self):
        data = TrainingSet(np.random.default_rng(0).normal(size=(8, 2)), np.zeros(8))
        result = train_1d(data, params_for())
        assert result.iterations == 0
        assert result.converged

    @pytest.mark.parametrize("tau", [0.25, 0.5, 0.75])
    def test_agrees_with_coordinate_ascent_oracle(self, tau):
        data = random_set(50, 2, seed=5)
        params = params_for(tau=tau, cost=2.0, gamma=1.5, epsilon=1e-9)
        result = train_1d(data, params)
        assert result.converged
        alpha, beta = coordinate_ascent_oracle(data, params)
        expected = dual_objective(data, params, alpha, beta)
        assert_allclose(result.state.objective(), expected, rtol=1e-6)

    def test_stops_within_threshold(self):
        data = random_set(60, 3, seed=6)
        params = params_for(tau=0.3, cost=5.0, gamma=1.0)
        result = train_1d(data, params)
        assert result.gap.s <= result.gap.threshold
        assert_allclose(result.gap.threshold, params.epsilon / (2 * params.lam(data.n)))

    def test_iteration_cap(self, caplog):
        data = random_set(40, 2, seed=7)
        with caplog.at_level(logging.WARNING):
            result = train_1d(data, params_for(cost=10.0, epsilon=1e-12),
                              options=SolverOptions(solver="1d", max_iter=3))
        assert not result.converged
        assert result.iterations == 3
        assert "stopped after 3 iterations" in caplog.text

    def test_dual_monotone_and_gap_nonnegative(self):
        data = random_set(50, 1, seed=8)
        params = params_for(tau=0.75, cost=2.0)
        trace = []
        train_1d(data, params, callback=lambda state, it, gap: trace.append((state.objective(), gap.s)))
        objectives = np.array([t[0] for t in trace])
        gaps = np.array([t[1] for t in trace])
        assert np.all(np.diff(objectives) >= -1e-10 * np.maximum(1.0, np.abs(objectives[:-1])))
        assert np.all(gaps >= -1e-9)

    def test_debug_checkpoints_pass(self):
        data = random_set(40, 2, seed=9)
        options = SolverOptions(solver="1d", debug=True, debug_interval=5)
        assert train_1d(data, params_for(tau=0.25, cost=3.0), options=options).converged

    def test_debug_checkpoint_detects_corruption(self):
        data = random_set(30, 2, seed=10)
        options = SolverOptions(solver="1d", debug=True, debug_interval=1)

        def corrupt(state, iteration, gap):
            if iteration == 2:
                state.grad_alpha[0] += 1.0

        with pytest.raises(ConsistencyError):
            train_1d(data, params_for(cost=4.0), options=options, callback=corrupt)

    def test_warm_start_init(self):
        data = random_set(40, 2, seed=11)
        params = params_for(cost=1.0, epsilon=1e-8)
        first = train_1d(data, params)
        init = DualState.warm_start(first.state, 1.0, 2.0)
        warm = train_1d(data, params.with_cost(2.0), init=init)
        cold = train_1d(data, params.with_cost(2.0))
        assert warm.converged and cold.converged
        assert_allclose(warm.state.objective(), cold.state.objective(), rtol=1e-6)

    def test_init_size_mismatch(self):
        data = random_set(10, 1)
        init = DualState.cold_start(random_set(9, 1), params_for())
        with pytest.raises(ValueError):
            train_1d(data, params_for(), init=init)
