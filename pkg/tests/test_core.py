import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlfit.core import (
    Dataset,
    evaluate_bundle,
    finite_diff_jacobian,
    finite_diff_second_array,
    make_rng,
    residual_sum_squares,
    residuals,
)
from nlfit.errors import DataError, NonFiniteEvaluation
from nlfit.models import get_model

from conftest import POINT_RANGES, sample_point


class TestDataset:
    def test_promotes_vector_to_column(self):
        d = Dataset([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        assert d.x.shape == (3, 1) and d.n == 3 and d.k == 1

    def test_matrix_predictors(self):
        d = Dataset(np.ones((4, 3)), np.zeros(4))
        assert (d.n, d.k) == (4, 3)

    @pytest.mark.parametrize("x,y", [
        ([1.0, 2.0], [1.0]),
        ([1.0, np.nan], [1.0, 2.0]),
        ([1.0, 2.0], [np.inf, 2.0]),
        ([], []),
    ])
    def test_rejects_invalid(self, x, y):
        with pytest.raises(DataError):
            Dataset(x, y)

    def test_arrays_are_read_only(self):
        d = Dataset([1.0, 2.0], [3.0, 4.0])
        with pytest.raises(ValueError):
            d.y[0] = 9.0


class TestResidualSumSquares:
    def test_exact_fit_is_zero(self):
        assert residual_sum_squares(get_model("michaelis_menten"), [6, 5], Dataset([5.0], [3.0])) == 0.0

    def test_unit_residuals(self):
        m = get_model("exponential")
        x = np.array([0.0, 0.5, 1.0, 2.0])
        y = m.mean(np.array([1.5, 0.3]), x) + 1.0
        assert residual_sum_squares(m, [1.5, 0.3], Dataset(x, y)) == pytest.approx(4.0, rel=1e-14)

    def test_beverton_holt_hand_value(self):
        assert residual_sum_squares(get_model("beverton_holt"), [2, 10], Dataset([10.0], [0.0])) == 100.0

    def test_pole_raises(self):
        with pytest.raises(NonFiniteEvaluation):
            residual_sum_squares(get_model("michaelis_menten"), [6, -5], Dataset([5.0, 1.0], [3.0, 1.0]))

    @given(st.lists(st.floats(-100, 100).filter(lambda v: v == 0 or abs(v) > 1e-100), min_size=1, max_size=20))
    def test_nonnegative_and_zero_iff_exact(self, ys):
        x = np.arange(len(ys), dtype=float)
        m = get_model("linear")
        d = Dataset(x, ys)
        s = residual_sum_squares(m, [0.0, 0.0], d)
        assert s >= 0
        assert (s == 0) == all(v == 0 for v in ys)


def test_eval_bundle_consistency():
    rng = make_rng(3)
    m = get_model("logistic")
    th, x = sample_point("logistic", rng, 25)
    d = Dataset(x, rng.normal(size=25))
    b = evaluate_bundle(m, th, d)
    assert b.s_value == pytest.approx(float(b.residuals @ b.residuals), rel=1e-12)
    assert b.jacobian.shape == (25, 4)
    np.testing.assert_array_equal(b.residuals, residuals(m, th, d))


class TestFiniteDifferences:
    def test_linear_jacobian_is_design(self):
        x = np.array([-1.0, 0.0, 2.5])
        J = finite_diff_jacobian(get_model("linear"), [3.0, -2.0], Dataset(x, x))
        np.testing.assert_allclose(J, np.column_stack([np.ones(3), x]), atol=1e-9)

    def test_michaelis_menten_theta1_derivative(self):
        J = finite_diff_jacobian(get_model("michaelis_menten"), [6.0, 5.0], Dataset([5.0], [0.0]))
        assert J[0, 0] == pytest.approx(0.5, abs=1e-8)

    def test_logistic_matches_analytic(self):
        rng = make_rng(11)
        m = get_model("logistic")
        th, x = sample_point("logistic", rng, 10)
        fd = finite_diff_jacobian(m, th, Dataset(x, x))
        an = m.jacobian(th, x)
        assert np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an))) < 1e-6

    def test_linear_second_array_zero(self):
        x = np.linspace(-2, 2, 5)
        G = finite_diff_second_array(get_model("linear"), [1.0, 2.0], Dataset(x, x))
        assert np.max(np.abs(G)) < 1e-6

    def test_exponential_second_derivative(self):
        G = finite_diff_second_array(get_model("exponential"), [1.0, 0.0], Dataset([2.0], [0.0]))
        assert G[0, 1, 1] == pytest.approx(4.0, rel=1e-6)

    def test_beverton_holt_matches_independent_hessian(self):
        # f = a x / (1 + x/b) = a b x / (b + x), derived by hand
        a, b = 2.0, 10.0
        x = np.array([0.5, 3.0, 10.0, 40.0])
        exact = np.empty((4, 2, 2))
        exact[:, 0, 0] = 0.0
        exact[:, 0, 1] = exact[:, 1, 0] = x**2 / (b + x) ** 2
        exact[:, 1, 1] = -2.0 * a * x**2 / (b + x) ** 3
        G = finite_diff_second_array(get_model("beverton_holt"), [a, b], Dataset(x, x))
        scale = np.maximum(1.0, np.abs(exact))
        assert np.max(np.abs(G - exact) / scale) < 1e-5

    @pytest.mark.parametrize("model_id", sorted(POINT_RANGES))
    def test_symmetry_and_raw_asymmetry(self, model_id):
        rng = make_rng(5)
        m = get_model(model_id)
        th, x = sample_point(model_id, rng, 6)
        G, raw = finite_diff_second_array(m, th, Dataset(x, x), return_raw=True)
        np.testing.assert_array_equal(G, np.transpose(G, (0, 2, 1)))
        scale = np.maximum(1.0, np.abs(G)).max()
        assert np.max(np.abs(raw - np.transpose(raw, (0, 2, 1)))) / scale < 1e-5

    def test_deterministic(self):
        m = get_model("gompertz")
        th, x = sample_point("gompertz", make_rng(1), 8)
        a = finite_diff_jacobian(m, th, Dataset(x, x))
        b = finite_diff_jacobian(m, th, Dataset(x, x))
        np.testing.assert_array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from(sorted(POINT_RANGES)))
def test_fd_jacobian_matches_analytic_property(seed, model_id):
    rng = make_rng(seed)
    m = get_model(model_id)
    th, x = sample_point(model_id, rng, 5)
    fd = finite_diff_jacobian(m, th, Dataset(x, x))
    an = m.jacobian(th, x)
    assert np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an))) < 1e-6
