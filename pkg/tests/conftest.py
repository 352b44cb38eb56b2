"""Shared fixtures and the corpus-wide monotone-descent recorder.

Every FitResult built by any solver during the session passes through
``solvers._result``; the wrapper below checks that each accepted step lowered
S and records violations, which fail the session at the end.
"""

import numpy as np
import pytest

from nlfit import solvers
from nlfit.core import Dataset, make_rng
from nlfit.models import get_model

DESCENT_LOG = {"fits": 0, "steps": 0, "violations": []}

_original_result = solvers._result


def _recording_result(prob, theta, s_value, it, status, trace, method, *args, **kwargs):
    DESCENT_LOG["fits"] += 1
    for a, b in zip(trace, trace[1:]):
        DESCENT_LOG["steps"] += 1
        if not b.s_value < a.s_value:
            DESCENT_LOG["violations"].append((method, a.s_value, b.s_value))
    return _original_result(prob, theta, s_value, it, status, trace, method, *args, **kwargs)


solvers._result = _recording_result


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if DESCENT_LOG["fits"]:
        v = DESCENT_LOG["violations"]
        terminalreporter.write_line(
            f"{'FAIL' if v else 'PASS'} criterion 12 (whole test corpus): {DESCENT_LOG['fits']} solver runs, "
            f"{DESCENT_LOG['steps']} accepted steps, {len(v)} increases of S")


def pytest_sessionfinish(session, exitstatus):
    if DESCENT_LOG["violations"]:
        print(f"\nmonotone descent violated: {DESCENT_LOG['violations'][:5]}")
        session.exitstatus = 1


@pytest.fixture
def mm():
    return get_model("michaelis_menten")


def mm_normal_data(n=50, seed=0, theta=(6.0, 5.0), sd=1.0):
    rng = make_rng(seed)
    x = rng.uniform(1.0, 100.0, n)
    y = get_model("michaelis_menten").mean(np.asarray(theta), x) + sd * rng.normal(size=n)
    return Dataset(x, y)


def linear_data(n=20, seed=0, theta=(1.0, 2.0), sd=0.5):
    rng = make_rng(seed)
    x = rng.uniform(-3.0, 3.0, n)
    return Dataset(x, theta[0] + theta[1] * x + sd * rng.normal(size=n))


# parameter and predictor ranges where every catalog model is smooth and finite
POINT_RANGES = {
    "beverton_holt": ([(0.5, 5), (1, 20)], (0.1, 50)),
    "michaelis_menten": ([(1, 10), (0.5, 10)], (0.1, 50)),
    "rectangular_hyperbola": ([(1, 10), (0.5, 10)], (0.1, 50)),
    "michaelis_menten_reciprocal": ([(0.1, 1), (0.1, 2)], (0.1, 50)),
    "exponential": ([(0.5, 3), (-0.5, 0.5)], (0, 3)),
    "asymptotic": ([(1, 10), (-5, 5), (0.1, 2)], (0, 5)),
    "negative_exponential": ([(1, 10), (0.1, 2)], (0, 5)),
    "power": ([(0.5, 3), (-1, 2)], (0.1, 10)),
    "logarithmic": ([(-5, 5), (-2, 2)], (0.1, 10)),
    "logistic": ([(0, 2), (5, 10), (-2, 2), (-2, 2)], (-3, 3)),
    "gompertz": ([(0, 2), (5, 10), (-2, 2), (-2, 2)], (-3, 3)),
    "log_logistic": ([(0, 2), (5, 10), (-3, 3), (0.5, 5)], (0.1, 10)),
    "weibull1": ([(0, 2), (-3, 3), (0.5, 5), (5, 10)], (0.1, 10)),
    "weibull2": ([(0, 2), (-3, 3), (0.5, 5), (5, 10)], (0.1, 10)),
    "linear": ([(-5, 5), (-5, 5)], (-10, 10)),
    "polynomial2": ([(-5, 5)] * 3, (-3, 3)),
    "polynomial3": ([(-5, 5)] * 4, (-3, 3)),
}


def sample_point(model_id, rng, n_x=1):
    th_ranges, (xlo, xhi) = POINT_RANGES[model_id]
    theta = np.array([rng.uniform(lo, hi) for lo, hi in th_ranges])
    return theta, rng.uniform(xlo, xhi, n_x)
