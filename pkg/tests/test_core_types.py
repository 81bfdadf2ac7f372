import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize_scalar

from core_types import (DataFormatError, HyperParams, SolverOptions, TrainingSet,
                        WorkingSetStrategy, als_loss, als_risk, sample_expectile)


class TestAlsLoss:

    def test_examples(self):
        assert als_loss(0.0, 0.3) == 0.0
        assert_allclose(als_loss(2.0, 0.75), 3.0)
        assert_allclose(als_loss(-2.0, 0.75), 1.0)

    def test_vectorised(self):
        assert_allclose(als_loss(np.array([2.0, -2.0, 0.0]), 0.75), [3.0, 1.0, 0.0])

    def test_symmetric_at_half(self):
        t = np.linspace(-3, 3, 13)
        assert_allclose(als_loss(t, 0.5), als_loss(-t, 0.5))

    @pytest.mark.parametrize("tau", [0.05, 0.25, 0.6, 0.9, 0.99])
    def test_reflection(self, tau):
        t = np.random.default_rng(0).normal(scale=3.0, size=200)
        assert_allclose(als_loss(t, tau), als_loss(-t, 1.0 - tau), rtol=1e-15)

    @pytest.mark.parametrize("tau", [0.1, 0.5, 0.8])
    def test_midpoint_convex(self, tau):
        rng = np.random.default_rng(1)
        a, b = rng.normal(scale=2.0, size=(2, 1000))
        assert np.all(als_loss((a + b) / 2, tau) <= (als_loss(a, tau) + als_loss(b, tau)) / 2 + 1e-12)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, float("nan")])
    def test_rejects_tau_outside_open_interval(self, tau):
        with pytest.raises(ValueError):
            als_loss(1.0, tau)

    def test_rejects_non_finite_residual(self):
        with pytest.raises(ValueError):
            als_loss(float("inf"), 0.5)


class TestAlsRisk:

    def test_examples(self):
        assert als_risk([0.0, 0.0, 0.0], 0.5) == 0.0
        assert_allclose(als_risk([2.0, -2.0], 0.75), 2.0)
        assert_allclose(als_risk([1.0, 1.0, 1.0, 1.0], 0.25), 0.25)

    def test_empty(self):
        with pytest.raises(ValueError):
            als_risk([], 0.5)


class TestSampleExpectile:

    def test_examples(self):
        assert_allclose(sample_expectile([0.0, 1.0], 0.5), 0.5, atol=1e-12)
        assert_allclose(sample_expectile([0.0, 1.0], 0.75), 0.75, atol=1e-12)
        assert sample_expectile([4.0, 4.0, 4.0], 0.1) == 4.0

    def test_half_is_mean(self):
        values = np.random.default_rng(3).normal(size=101)
        assert_allclose(sample_expectile(values, 0.5), values.mean(), atol=1e-10)

    @pytest.mark.parametrize("tau", [0.05, 0.3, 0.9])
    def test_minimizes_empirical_risk(self, tau):
        values = np.random.default_rng(11).exponential(size=60)
        best = minimize_scalar(lambda e: als_risk(values - e, tau),
                               bounds=(values.min(), values.max()), method='bounded',
                               options={'xatol': 1e-12})
        assert_allclose(sample_expectile(values, tau), best.x, atol=1e-6)

    def test_monotone_in_tau(self):
        values = np.random.default_rng(5).normal(size=40)
        levels = [sample_expectile(values, t) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert np.all(np.diff(levels) > 0)


class TestTrainingSet:

    def test_shapes(self):
        data = TrainingSet(np.zeros((4, 2)), np.arange(4.0))
        assert (data.n, data.d) == (4, 2)

    def test_one_dimensional_features_become_a_column(self):
        assert TrainingSet(np.arange(3.0), np.zeros(3)).d == 1

    def test_label_count_mismatch(self):
        with pytest.raises(ValueError):
            TrainingSet(np.zeros((3, 1)), np.zeros(2))

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            TrainingSet(np.array([[np.nan]]), np.array([1.0]))

    def test_read_only(self):
        data = TrainingSet(np.zeros((2, 1)), np.zeros(2))
        with pytest.raises(ValueError):
            data.labels[0] = 1.0

    def test_subset_keeps_order(self):
        data = TrainingSet(np.arange(5.0).reshape(-1, 1), np.arange(5.0) * 10)
        part = data.subset([3, 1])
        assert_allclose(part.labels, [30.0, 10.0])


class TestHyperParams:

    def test_from_lambda(self):
        params = HyperParams.from_lambda(10, 0.05, tau=0.5, gamma=1.0)
        assert_allclose(params.cost, 1.0)
        assert_allclose(params.lam(10), 0.05)

    def test_defaults(self):
        params = HyperParams(tau=0.5, cost=1.0, gamma=1.0)
        assert params.epsilon == 1e-3
        assert params.wss == WorkingSetStrategy.WSS2
        assert params.knn == 15
        assert not params.use_clipped_gap

    def test_wss_from_string(self):
        assert HyperParams(tau=0.5, cost=1.0, gamma=1.0, wss="wss1").wss == WorkingSetStrategy.WSS1

    @pytest.mark.parametrize("field,value", [
        ("tau", 1.0), ("tau", 0.0), ("cost", 0.0), ("gamma", -1.0), ("epsilon", 0.0),
        ("clip_m", float("inf")), ("knn", 0),
    ])
    def test_validation(self, field, value):
        kwargs = dict(tau=0.5, cost=1.0, gamma=1.0)
        kwargs[field] = value
        with pytest.raises(ValueError):
            HyperParams(**kwargs)

    def test_with_cost_copies(self):
        params = HyperParams(tau=0.25, cost=1.0, gamma=2.0, knn=5)
        other = params.with_cost(4.0)
        assert other.cost == 4.0 and params.cost == 1.0
        assert (other.tau, other.gamma, other.knn) == (0.25, 2.0, 5)


class TestSolverOptions:

    def test_defaults(self):
        options = SolverOptions()
        assert options.solver == "2d"
        assert options.full_matrix_max_n == 8000

    @pytest.mark.parametrize("kwargs", [
        {"solver": "3d"}, {"kernel_mode": "disk"}, {"max_iter": -1}, {"cache_rows": 1},
        {"debug_interval": 0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            SolverOptions(**kwargs)


def test_data_format_error_names_location():
    error = DataFormatError("non-numeric value 'x'", path="train.csv", line=4, column=2)
    assert str(error) == "train.csv, line 4, column 2: non-numeric value 'x'"
    assert isinstance(error, ValueError)
