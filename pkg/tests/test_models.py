import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlfit.core import Dataset, finite_diff_jacobian, finite_diff_second_array, make_rng
from nlfit.errors import DomainViolation, NotAvailable
from nlfit.models import (
    CATALOG,
    MODEL_IDS,
    analytic_gradient,
    analytic_second,
    evaluate,
    get_model,
    polynomial,
    second_derivatives,
)

from conftest import POINT_RANGES, sample_point


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


class TestCatalog:
    @pytest.mark.parametrize("model_id,p", [
        ("beverton_holt", 2), ("michaelis_menten", 2), ("exponential", 2), ("asymptotic", 3),
        ("negative_exponential", 2), ("power", 2), ("logarithmic", 2), ("rectangular_hyperbola", 2),
        ("logistic", 4), ("gompertz", 4), ("log_logistic", 4), ("weibull1", 4), ("weibull2", 4),
        ("linear", 2),
    ])
    def test_parameter_counts(self, model_id, p):
        m = get_model(model_id)
        assert m.p == p == len(m.param_names)

    @pytest.mark.parametrize("d", [1, 2, 5])
    def test_polynomial_degree(self, d):
        assert get_model("polynomial", d).p == d + 1
        assert get_model(f"polynomial{d}").p == d + 1
        assert polynomial(d).id == f"polynomial{d}"

    def test_unknown_ids(self):
        with pytest.raises(KeyError):
            get_model("nope")
        with pytest.raises(KeyError):
            get_model("polynomial")

    def test_ids_are_snake_case(self):
        for mid in MODEL_IDS:
            assert mid == mid.lower() and " " not in mid

    def test_rectangular_hyperbola_alias(self):
        x = np.linspace(0.5, 20, 7)
        np.testing.assert_array_equal(get_model("rectangular_hyperbola").mean([3, 2], x),
                                      get_model("michaelis_menten").mean([3, 2], x))


class TestEvaluate:
    def test_michaelis_menten_half_maximum(self):
        assert evaluate(get_model("michaelis_menten"), [8, 3], 3.0) == 4.0

    @given(st.floats(-10, 10), st.floats(0.01, 5))
    def test_negative_exponential_origin(self, t1, t2):
        assert evaluate(get_model("negative_exponential"), [t1, t2], 0.0) == 0.0

    def test_logistic_midpoint(self):
        assert evaluate(get_model("logistic"), [1, 9, 2, 0], 0.0) == 5.0

    def test_domain_violation_names_point(self):
        with pytest.raises(DomainViolation, match="observation 1"):
            get_model("michaelis_menten").mean([6, -2], np.array([1.0, 2.0, 3.0]))
        with pytest.raises(DomainViolation):
            get_model("logarithmic").mean([1, 1], np.array([1.0, 0.0]))
        with pytest.raises(DomainViolation):
            get_model("power").mean([1, 0.5], np.array([-1.0]))


class TestGradients:
    def test_michaelis_menten_hand(self):
        np.testing.assert_allclose(analytic_gradient(get_model("michaelis_menten"), [6, 5], 5.0),
                                   [0.5, -0.3], rtol=1e-15)

    def test_exponential_hand(self):
        np.testing.assert_allclose(analytic_gradient(get_model("exponential"), [2, 0], 3.0), [1.0, 6.0])

    @pytest.mark.parametrize("model_id", sorted(POINT_RANGES))
    def test_matches_finite_differences(self, model_id):
        m = get_model(model_id)
        rng = make_rng(2024)
        for _ in range(20):
            th, x = sample_point(model_id, rng, 4)
            assert rel_err(finite_diff_jacobian(m, th, Dataset(x, x)), m.jacobian(th, x)) < 1e-6


class TestSecondDerivatives:
    @pytest.mark.parametrize("model_id", ["linear", "polynomial2", "polynomial3"])
    def test_zero_for_linear_in_theta(self, model_id):
        m = get_model(model_id)
        th, x = sample_point(model_id, make_rng(0), 5)
        assert np.all(second_derivatives(m, th, x) == 0.0)

    def test_michaelis_menten_cross(self):
        G = analytic_second(get_model("michaelis_menten"), [6, 5], 5.0)
        assert G[0, 1] == pytest.approx(-0.05, rel=1e-15)

    @pytest.mark.parametrize("model_id", [m for m in sorted(POINT_RANGES) if get_model(m).has_analytic_hessian])
    def test_analytic_matches_fd_and_is_symmetric(self, model_id):
        m = get_model(model_id)
        rng = make_rng(77)
        for _ in range(10):
            th, x = sample_point(model_id, rng, 4)
            G = m.second(th, x)
            np.testing.assert_array_equal(G, np.transpose(G, (0, 2, 1)))
            assert rel_err(finite_diff_second_array(m, th, Dataset(x, x)), G) < 1e-5

    def test_not_available_falls_back(self):
        m = get_model("linear")
        stripped = type(m)(m.id, m.p, m.param_names, m.formula, m.mean_fn, m.grad_fn)
        with pytest.raises(NotAvailable):
            stripped.second([1, 2], [0.5])
        G = second_derivatives(stripped, [1.0, 2.0], np.array([0.5, 1.0]))
        assert G.shape == (2, 2, 2) and np.max(np.abs(G)) < 1e-6


class TestLimitsAndIdentities:
    def test_asymptotic_limit(self):
        assert evaluate(get_model("asymptotic"), [7.0, 1.0, 0.5], 1e6) == pytest.approx(7.0, abs=1e-3)

    def test_logistic_upper_limit(self):
        assert evaluate(get_model("logistic"), [3.0, 9.0, 1.5, 0.0], 1e3) == pytest.approx(3.0, abs=1e-9)

    def test_power_unit_exponent_is_linear(self):
        x = np.linspace(0.1, 10, 9)
        np.testing.assert_allclose(get_model("power").mean([2.5, 1.0], x), 2.5 * x, rtol=1e-15)

    @settings(max_examples=50)
    @given(st.floats(0.1, 5), st.floats(-2, 2), st.floats(0.01, 100))
    def test_power_equals_exp_log(self, t1, t2, x):
        f = evaluate(get_model("power"), [t1, t2], x)
        assert f == pytest.approx(t1 * math.exp(t2 * math.log(x)), rel=1e-12)

    @settings(max_examples=50)
    @given(st.floats(0.5, 20), st.floats(0.1, 20), st.floats(0.01, 100))
    def test_reciprocal_transform(self, b1, b2, x):
        f = evaluate(get_model("michaelis_menten"), [b1, b2], x)
        assert 1.0 / f == pytest.approx(1.0 / b1 + (b2 / b1) / x, rel=1e-12)

    def test_reciprocal_parameterization_same_curve(self):
        x = np.linspace(0.5, 40, 11)
        t1, t2 = 6.0, 5.0
        np.testing.assert_allclose(get_model("michaelis_menten_reciprocal").mean([1 / t1, t2 / t1], x),
                                   get_model("michaelis_menten").mean([t1, t2], x), rtol=1e-14)


def test_every_catalog_entry_has_point_ranges():
    assert set(CATALOG) <= set(POINT_RANGES)
