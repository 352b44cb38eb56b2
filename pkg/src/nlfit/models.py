"""Catalog of parametric mean functions with analytic derivatives.

Every catalog entry fixes a single parameterization. Predictors are passed
as an (n, k) matrix; catalog models read the first column only.

Mean, gradient and second-derivative callables receive ``(theta, x)`` with
``x`` a 1-D array of predictor values and return arrays of shape (n,),
(n, p) and (n, p, p) respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nlfit.errors import DomainViolation, NonFiniteEvaluation, NotAvailable

Array = NDArray[np.float64]
DomainFn = Callable[[Array, Array], "tuple[NDArray[np.bool_], str]"]


@dataclass(frozen=True)
class ModelSpec:
    id: str
    p: int
    param_names: tuple[str, ...]
    formula: str
    mean_fn: Callable[[Array, Array], Array] = field(repr=False)
    grad_fn: Callable[[Array, Array], Array] = field(repr=False)
    second_fn: Callable[[Array, Array], Array] | None = field(default=None, repr=False)
    domain_fn: DomainFn | None = field(default=None, repr=False)
    # custom models may want every predictor column
    full_matrix: bool = False

    @property
    def has_analytic_hessian(self) -> bool:
        return self.second_fn is not None

    def _cols(self, x: ArrayLike) -> Array:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr[:, None]
        return arr if self.full_matrix else arr[:, 0]

    def in_domain(self, theta: ArrayLike, x: ArrayLike) -> NDArray[np.bool_]:
        th = np.asarray(theta, dtype=float)
        xs = self._cols(x)
        n = xs.shape[0]
        if self.domain_fn is None:
            return np.ones(n, dtype=bool)
        ok, _ = self.domain_fn(th, xs)
        return np.broadcast_to(ok, (n,)).copy()

    def check_domain(self, theta: ArrayLike, x: ArrayLike) -> None:
        if self.domain_fn is None:
            return
        theta = np.asarray(theta, dtype=float)
        xs = self._cols(x)
        ok, why = self.domain_fn(theta, xs)
        ok = np.broadcast_to(ok, (xs.shape[0],))
        if not np.all(ok):
            i = int(np.flatnonzero(~ok)[0])
            raise DomainViolation(f"{self.id}: theta={theta.tolist()} invalid at observation {i}: {why}")

    def _prep(self, theta: ArrayLike, x: ArrayLike) -> tuple[Array, Array]:
        th = np.asarray(theta, dtype=float)
        if th.shape != (self.p,):
            raise ValueError(f"{self.id} expects {self.p} parameters, got shape {th.shape}")
        xs = self._cols(x)
        self.check_domain(th, xs)
        return th, xs

    def mean(self, theta: ArrayLike, x: ArrayLike) -> Array:
        th, xs = self._prep(theta, x)
        with np.errstate(all="ignore"):
            f = np.asarray(self.mean_fn(th, xs), dtype=float)
        if not np.all(np.isfinite(f)):
            i = int(np.flatnonzero(~np.isfinite(f))[0])
            raise NonFiniteEvaluation(f"{self.id}: mean is {f[i]} at observation {i}, theta={th.tolist()}")
        return f

    def jacobian(self, theta: ArrayLike, x: ArrayLike) -> Array:
        th, xs = self._prep(theta, x)
        with np.errstate(all="ignore"):
            J = np.asarray(self.grad_fn(th, xs), dtype=float).reshape(xs.shape[0], self.p)
        if not np.all(np.isfinite(J)):
            raise NonFiniteEvaluation(f"{self.id}: non-finite gradient at theta={th.tolist()}")
        return J

    def second(self, theta: ArrayLike, x: ArrayLike) -> Array:
        if self.second_fn is None:
            raise NotAvailable(f"{self.id} has no analytic second derivatives")
        th, xs = self._prep(theta, x)
        with np.errstate(all="ignore"):
            G = np.asarray(self.second_fn(th, xs), dtype=float).reshape(xs.shape[0], self.p, self.p)
        if not np.all(np.isfinite(G)):
            raise NonFiniteEvaluation(f"{self.id}: non-finite second derivatives at theta={th.tolist()}")
        return G


def evaluate(model: ModelSpec, theta: ArrayLike, x: ArrayLike) -> float:
    """f(x, theta) for a single predictor row."""
    return float(model.mean(theta, np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])


def analytic_gradient(model: ModelSpec, theta: ArrayLike, x: ArrayLike) -> Array:
    return model.jacobian(theta, np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0]


def analytic_second(model: ModelSpec, theta: ArrayLike, x: ArrayLike) -> Array:
    return model.second(theta, np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0]


def second_derivatives(model: ModelSpec, theta: ArrayLike, x: ArrayLike) -> Array:
    """Analytic G_i when available, central finite differences otherwise."""
    if model.has_analytic_hessian:
        return model.second(theta, x)
    from nlfit.core import finite_diff_second_array

    return finite_diff_second_array(model, theta, np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _stack2(*rows: Array) -> Array:
    return np.stack(rows, axis=-1)


def _sym(n: int, p: int, entries: dict[tuple[int, int], Array]) -> Array:
    G = np.zeros((n, p, p))
    for (j, k), v in entries.items():
        G[:, j, k] = v
        G[:, k, j] = v
    return G


def _nonzero(den: Array, why: str) -> tuple[NDArray[np.bool_], str]:
    return (den != 0) & np.isfinite(den), why


def _positive_x(theta: Array, x: Array) -> tuple[NDArray[np.bool_], str]:
    return x > 0, "requires x > 0"


# ---------------------------------------------------------------------------
# linear-in-parameter models
# ---------------------------------------------------------------------------

def _linear() -> ModelSpec:
    return ModelSpec(
        id="linear",
        p=2,
        param_names=("theta1", "theta2"),
        formula="theta1 + theta2*x",
        mean_fn=lambda th, x: th[0] + th[1] * x,
        grad_fn=lambda th, x: _stack2(np.ones_like(x), x),
        second_fn=lambda th, x: np.zeros((x.size, 2, 2)),
    )


def _polynomial(degree: int) -> ModelSpec:
    if degree < 1:
        raise ValueError("polynomial degree must be >= 1")
    p = degree + 1

    def design(x: Array) -> Array:
        return np.vander(x, p, increasing=True)

    return ModelSpec(
        id=f"polynomial{degree}",
        p=p,
        param_names=tuple(f"theta{j + 1}" for j in range(p)),
        formula=" + ".join(f"theta{j + 1}*x^{j}" for j in range(p)),
        mean_fn=lambda th, x: design(x) @ th,
        grad_fn=lambda th, x: design(x),
        second_fn=lambda th, x: np.zeros((x.size, p, p)),
    )


def _logarithmic() -> ModelSpec:
    return ModelSpec(
        id="logarithmic",
        p=2,
        param_names=("theta1", "theta2"),
        formula="theta1 + theta2*log(x)",
        mean_fn=lambda th, x: th[0] + th[1] * np.log(x),
        grad_fn=lambda th, x: _stack2(np.ones_like(x), np.log(x)),
        second_fn=lambda th, x: np.zeros((x.size, 2, 2)),
        domain_fn=_positive_x,
    )


# ---------------------------------------------------------------------------
# concave / convex curves
# ---------------------------------------------------------------------------

def _exponential() -> ModelSpec:
    def grad(th, x):
        e = np.exp(th[1] * x)
        return _stack2(e, th[0] * x * e)

    def second(th, x):
        e = np.exp(th[1] * x)
        return _sym(x.size, 2, {(0, 1): x * e, (1, 1): th[0] * x**2 * e})

    return ModelSpec(
        id="exponential",
        p=2,
        param_names=("theta1", "theta2"),
        formula="theta1*exp(theta2*x)",
        mean_fn=lambda th, x: th[0] * np.exp(th[1] * x),
        grad_fn=grad,
        second_fn=second,
    )


def _asymptotic() -> ModelSpec:
    def grad(th, x):
        e = np.exp(-th[2] * x)
        return _stack2(1.0 - e, e, (th[0] - th[1]) * x * e)

    def second(th, x):
        e = np.exp(-th[2] * x)
        return _sym(x.size, 3, {(0, 2): x * e, (1, 2): -x * e, (2, 2): -(th[0] - th[1]) * x**2 * e})

    return ModelSpec(
        id="asymptotic",
        p=3,
        param_names=("theta1", "theta2", "theta3"),
        formula="theta1 - (theta1 - theta2)*exp(-theta3*x)",
        mean_fn=lambda th, x: th[0] - (th[0] - th[1]) * np.exp(-th[2] * x),
        grad_fn=grad,
        second_fn=second,
    )


def _negative_exponential() -> ModelSpec:
    def grad(th, x):
        e = np.exp(-th[1] * x)
        return _stack2(1.0 - e, th[0] * x * e)

    def second(th, x):
        e = np.exp(-th[1] * x)
        return _sym(x.size, 2, {(0, 1): x * e, (1, 1): -th[0] * x**2 * e})

    return ModelSpec(
        id="negative_exponential",
        p=2,
        param_names=("theta1", "theta2"),
        formula="theta1*(1 - exp(-theta2*x))",
        mean_fn=lambda th, x: th[0] * (1.0 - np.exp(-th[1] * x)),
        grad_fn=grad,
        second_fn=second,
    )


def _power() -> ModelSpec:
    # x > 0 is stricter than needed for integer exponents, but d/dtheta2 needs log(x)
    def grad(th, x):
        P = x ** th[1]
        return _stack2(P, th[0] * P * np.log(x))

    def second(th, x):
        P = x ** th[1]
        L = np.log(x)
        return _sym(x.size, 2, {(0, 1): P * L, (1, 1): th[0] * P * L**2})

    return ModelSpec(
        id="power",
        p=2,
        param_names=("theta1", "theta2"),
        formula="theta1*x^theta2",
        mean_fn=lambda th, x: th[0] * x ** th[1],
        grad_fn=grad,
        second_fn=second,
        domain_fn=_positive_x,
    )


def _michaelis_menten(model_id: str = "michaelis_menten") -> ModelSpec:
    def grad(th, x):
        d = th[1] + x
        return _stack2(x / d, -th[0] * x / d**2)

    def second(th, x):
        d = th[1] + x
        return _sym(x.size, 2, {(0, 1): -x / d**2, (1, 1): 2.0 * th[0] * x / d**3})

    return ModelSpec(
        id=model_id,
        p=2,
        param_names=("theta1", "theta2"),
        formula="theta1*x/(theta2 + x)",
        mean_fn=lambda th, x: th[0] * x / (th[1] + x),
        grad_fn=grad,
        second_fn=second,
        domain_fn=lambda th, x: _nonzero(th[1] + x, "pole at theta2 + x = 0"),
    )


def _michaelis_menten_reciprocal() -> ModelSpec:
    # beta1 = 1/theta1, beta2 = theta2/theta1: the parameters of the linearized 1/y form
    def grad(th, x):
        d = th[0] * x + th[1]
        return _stack2(-(x**2) / d**2, -x / d**2)

    def second(th, x):
        d3 = (th[0] * x + th[1]) ** 3
        return _sym(x.size, 2, {(0, 0): 2.0 * x**3 / d3, (0, 1): 2.0 * x**2 / d3, (1, 1): 2.0 * x / d3})

    return ModelSpec(
        id="michaelis_menten_reciprocal",
        p=2,
        param_names=("beta1", "beta2"),
        formula="x/(beta1*x + beta2)",
        mean_fn=lambda th, x: x / (th[0] * x + th[1]),
        grad_fn=grad,
        second_fn=second,
        domain_fn=lambda th, x: _nonzero(th[0] * x + th[1], "pole at beta1*x + beta2 = 0"),
    )


def _beverton_holt() -> ModelSpec:
    # alpha*x/(1 + x/beta) == alpha*beta*x/(beta + x); derivatives use the second form
    def grad(th, x):
        a, b = th
        d = b + x
        return _stack2(b * x / d, a * x**2 / d**2)

    def second(th, x):
        a, b = th
        d = b + x
        return _sym(x.size, 2, {(0, 1): x**2 / d**2, (1, 1): -2.0 * a * x**2 / d**3})

    def domain(th, x):
        b = th[1]
        if b == 0:
            return np.zeros(x.shape, dtype=bool), "beta must be nonzero"
        return _nonzero(b + x, "pole at beta + x = 0")

    return ModelSpec(
        id="beverton_holt",
        p=2,
        param_names=("alpha", "beta"),
        formula="alpha*x/(1 + x/beta)",
        mean_fn=lambda th, x: th[0] * x / (1.0 + x / th[1]),
        grad_fn=grad,
        second_fn=second,
        domain_fn=domain,
    )


# ---------------------------------------------------------------------------
# four-parameter sigmoids: f = theta_lo + (theta_hi - theta_lo) * s(z),
# z = theta_rate * (t(x) - phi(theta_loc))
# ---------------------------------------------------------------------------

def _logistic_s(z):
    # 1/(1 + exp(z)), evaluated without overflow warnings
    s = np.exp(-np.logaddexp(0.0, z))
    d1 = -s * (1.0 - s)
    d2 = d1 * (2.0 * s - 1.0)
    return s, d1, d2


def _gompertz_s(z):
    ez = np.exp(z)
    s = np.exp(-ez)
    d1 = -ez * s
    d2 = s * ez * (ez - 1.0)
    return s, d1, d2


def _weibull1_s(z):
    s, d1, d2 = _gompertz_s(z)
    return 1.0 - s, -d1, -d2


def _sigmoid(model_id, formula, s_fn, lo, hi, rate, loc, log_scale) -> ModelSpec:
    def parts(th, x):
        t = np.log(x) if log_scale else x
        phi = np.log(th[loc]) if log_scale else th[loc]
        zr = t - phi  # dz/d rate
        z = th[rate] * zr
        if log_scale:
            dphi, ddphi = 1.0 / th[loc], -1.0 / th[loc] ** 2
        else:
            dphi, ddphi = 1.0, 0.0
        zm = -th[rate] * dphi  # dz/d loc
        zrm = -dphi
        zmm = -th[rate] * ddphi
        s, s1, s2 = s_fn(z)
        return s, s1, s2, zr, zm, zrm, zmm

    def mean(th, x):
        s = parts(th, x)[0]
        return th[lo] + (th[hi] - th[lo]) * s

    def grad(th, x):
        s, s1, _, zr, zm, _, _ = parts(th, x)
        A = th[hi] - th[lo]
        J = np.empty((x.size, 4))
        J[:, lo] = 1.0 - s
        J[:, hi] = s
        J[:, rate] = A * s1 * zr
        J[:, loc] = A * s1 * zm
        return J

    def second(th, x):
        s, s1, s2, zr, zm, zrm, zmm = parts(th, x)
        A = th[hi] - th[lo]
        return _sym(
            x.size,
            4,
            {
                (lo, rate): -s1 * zr,
                (lo, loc): -s1 * zm,
                (hi, rate): s1 * zr,
                (hi, loc): s1 * zm,
                (rate, rate): A * s2 * zr**2,
                (rate, loc): A * (s2 * zr * zm + s1 * zrm),
                (loc, loc): A * (s2 * zm**2 + s1 * zmm),
            },
        )

    def domain(th, x):
        if log_scale:
            if th[loc] <= 0:
                return np.zeros(x.shape, dtype=bool), f"theta{loc + 1} must be > 0"
            return x > 0, "requires x > 0"
        return np.ones(x.shape, dtype=bool), ""

    return ModelSpec(
        id=model_id,
        p=4,
        param_names=("theta1", "theta2", "theta3", "theta4"),
        formula=formula,
        mean_fn=mean,
        grad_fn=grad,
        second_fn=second,
        domain_fn=domain,
    )


def _build_catalog() -> dict[str, ModelSpec]:
    mm = _michaelis_menten()
    entries = [
        _beverton_holt(),
        mm,
        _michaelis_menten("rectangular_hyperbola"),
        _michaelis_menten_reciprocal(),
        _exponential(),
        _asymptotic(),
        _negative_exponential(),
        _power(),
        _logarithmic(),
        _sigmoid("logistic", "theta1 + (theta2 - theta1)/(1 + exp(theta3*(x - theta4)))",
                 _logistic_s, lo=0, hi=1, rate=2, loc=3, log_scale=False),
        _sigmoid("gompertz", "theta1 + (theta2 - theta1)*exp(-exp(theta3*(x - theta4)))",
                 _gompertz_s, lo=0, hi=1, rate=2, loc=3, log_scale=False),
        _sigmoid("log_logistic", "theta1 + (theta2 - theta1)/(1 + exp(theta3*(log(x) - log(theta4))))",
                 _logistic_s, lo=0, hi=1, rate=2, loc=3, log_scale=True),
        # weibull entries follow the printed positions: theta4 is the upper level, theta2 the rate
        _sigmoid("weibull1", "theta1 + (theta4 - theta1)*(1 - exp(-exp(theta2*(log(x) - log(theta3)))))",
                 _weibull1_s, lo=0, hi=3, rate=1, loc=2, log_scale=True),
        _sigmoid("weibull2", "theta1 + (theta4 - theta1)*exp(-exp(theta2*(log(x) - log(theta3))))",
                 _gompertz_s, lo=0, hi=3, rate=1, loc=2, log_scale=True),
        _linear(),
    ]
    return {m.id: m for m in entries}


CATALOG: dict[str, ModelSpec] = _build_catalog()

MODEL_IDS: tuple[str, ...] = tuple(sorted(CATALOG)) + ("polynomial",)


def get_model(model_id: str, degree: int | None = None) -> ModelSpec:
    """Look up a catalog entry by its CLI id.

    ``polynomial`` needs ``degree``; ``polynomialD`` (e.g. ``polynomial3``)
    is accepted as shorthand.
    """
    if model_id == "polynomial":
        if degree is None:
            raise KeyError("polynomial model requires a degree")
        return _polynomial(int(degree))
    if model_id.startswith("polynomial") and model_id[len("polynomial"):].isdigit():
        return _polynomial(int(model_id[len("polynomial"):]))
    try:
        return CATALOG[model_id]
    except KeyError:
        raise KeyError(f"unknown model id {model_id!r}; known: {', '.join(MODEL_IDS)}") from None


def polynomial(degree: int) -> ModelSpec:
    return _polynomial(degree)
