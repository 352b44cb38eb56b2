import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mm_normal_data
from nlfit.core import Dataset, make_rng
from nlfit.errors import DegenerateWeights, EmptyNeighborhood
from nlfit.hetero import KernelSpec, VarianceModel, gls_fit, kernel_weights, nadaraya_watson
from nlfit.models import ModelSpec, get_model
from nlfit.sim import generate_heteroscedastic, gls_coverage_experiment
from nlfit.solvers import gauss_newton

MM = get_model("michaelis_menten")


def scaled_mm():
    """MM whose mean is multiplied by sqrt(w), carried as a second predictor column."""
    return ModelSpec(
        id="mm_scaled", p=2, param_names=MM.param_names, formula="sqrt(w) * mm",
        mean_fn=lambda th, x: x[:, 1] * MM.mean(th, x[:, 0]),
        grad_fn=lambda th, x: x[:, 1][:, None] * MM.jacobian(th, x[:, 0]),
        full_matrix=True,
    )


class TestGls:
    def test_constant_is_gauss_newton(self):
        data = mm_normal_data(40, 1)
        a = gls_fit(MM, data, VarianceModel(), (5.0, 4.0))
        b = gauss_newton(MM, data, (5.0, 4.0))
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, rtol=1e-10)
        assert a.s_value == pytest.approx(b.s_value, rel=1e-10)

    def test_user_weights_match_scaled_problem(self):
        data = mm_normal_data(40, 2)
        w = make_rng(3).uniform(0.2, 5.0, data.n)
        a = gls_fit(MM, data, VarianceModel("user_weights", weights=w), (5.0, 4.0))
        sw = np.sqrt(w)
        scaled = Dataset(np.column_stack([data.x[:, 0], sw]), sw * data.y)
        b = gauss_newton(scaled_mm(), scaled, (5.0, 4.0))
        assert a.converged and b.converged
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, rtol=1e-8)
        assert a.s_value == pytest.approx(b.s_value, rel=1e-8)

    def test_user_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            VarianceModel("user_weights", weights=np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            VarianceModel("user_weights")

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_fixed_point_normal_equations(self, seed):
        data = generate_heteroscedastic(100, seed)
        vm = VarianceModel("power_of_mean", 2.0)
        res = gls_fit(MM, data, vm, (6.0, 5.0))
        assert res.converged and res.method == "gls"
        mu = MM.mean(res.theta_hat, data.x)
        J = MM.jacobian(res.theta_hat, data.x)
        g = J.T @ (vm.weights_for(mu) * (data.y - mu))
        assert np.linalg.norm(g) < 1e-8

    @pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
    def test_scale_equivariance(self, c):
        x = np.linspace(0.5, 40, 25)
        y = MM.mean(np.array([6.0, 5.0]), x)
        vm = VarianceModel("power_of_mean", 2.0)
        a = gls_fit(MM, Dataset(x, y), vm, (5.0, 4.0))
        b = gls_fit(MM, Dataset(x, c * y), vm, (5.0 * c, 4.0))
        np.testing.assert_allclose(b.theta_hat, a.theta_hat * [c, 1.0], rtol=1e-8)

    def test_degenerate_weights(self):
        vm = VarianceModel("power_of_mean", 2.0)
        with pytest.raises(DegenerateWeights):
            vm.weights_for(np.array([1.0, 0.0, 2.0]))
        x = np.linspace(1, 10, 8)
        with pytest.raises(DegenerateWeights):
            gls_fit(MM, Dataset(x, x), vm, (0.0, 1.0))

    def test_weight_count_checked(self):
        data = mm_normal_data(10, 4)
        with pytest.raises(ValueError):
            gls_fit(MM, data, VarianceModel("user_weights", weights=np.ones(3)), (6.0, 5.0))

    def test_coverage_beats_unweighted(self):
        out = gls_coverage_experiment(n=200, reps=300, alpha=0.05, seed=20240)
        gls, ols = out["gls"], out["unweighted"]
        print(f"gls coverage {gls.empirical:.3f}, unweighted {ols.empirical:.3f}")
        assert gls.empirical >= 0.92
        assert gls.empirical - ols.empirical >= 0.03


class TestSmoother:
    def setup_method(self):
        rng = make_rng(11)
        x = rng.uniform(0, 10, 30)
        self.data = Dataset(x, np.sin(x) + 0.1 * rng.normal(size=30))

    @pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
    def test_constant_response(self, kernel):
        d = Dataset(self.data.x, np.full(30, 4.25))
        est = nadaraya_watson(np.linspace(1, 9, 7), d, KernelSpec(kernel, 2.0))
        np.testing.assert_allclose(est, 4.25, rtol=1e-14)

    def test_huge_bandwidth_gives_mean(self):
        est = nadaraya_watson(np.array([-50.0, 3.0, 1e3]), self.data, KernelSpec("gaussian", 1e9))
        np.testing.assert_allclose(est, self.data.y.mean(), atol=1e-9)

    @pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
    def test_single_point(self, kernel):
        d = Dataset([2.0], [7.0])
        for q in (1.5, 2.0, 2.9):
            assert nadaraya_watson(q, d, KernelSpec(kernel, 1.0)) == 7.0

    @pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
    def test_weights_sum_to_one(self, kernel):
        w = kernel_weights(np.linspace(0.5, 9.5, 40), self.data, KernelSpec(kernel, 1.5))
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_far_query_gaussian_is_finite(self):
        # log-sum-exp keeps the weights defined where every raw kernel value underflows
        est = nadaraya_watson(1e4, self.data, KernelSpec("gaussian", 0.1))
        assert np.isfinite(est)

    def test_empty_neighborhood(self):
        with pytest.raises(EmptyNeighborhood):
            nadaraya_watson(50.0, self.data, KernelSpec("epanechnikov", 1.0))

    def test_kernel_spec_validation(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 0.0)
        with pytest.raises(ValueError):
            KernelSpec("boxcar", 1.0)

    def test_multivariate_predictors(self):
        rng = make_rng(5)
        d = Dataset(rng.uniform(size=(20, 2)), rng.normal(size=20))
        assert isinstance(nadaraya_watson([0.5, 0.5], d, KernelSpec("gaussian", 0.3)), float)
        assert nadaraya_watson(rng.uniform(size=(4, 2)), d, KernelSpec("gaussian", 0.3)).shape == (4,)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=15), st.floats(-20, 20),
           st.floats(0.05, 50), st.sampled_from(["gaussian", "epanechnikov"]))
    def test_range_preservation(self, ys, q, h, kernel):
        x = np.linspace(-10, 10, len(ys))
        d = Dataset(x, ys)
        try:
            est = nadaraya_watson(q, d, KernelSpec(kernel, h))
        except EmptyNeighborhood:
            return
        tol = 1e-12 * (1 + max(abs(v) for v in ys))
        assert min(ys) - tol <= est <= max(ys) + tol
