"""Iterative least-squares solvers: Gauss-Newton, Newton-Raphson, Levenberg-Marquardt.

All three minimize S(theta) = sum_i w_i (y_i - f(x_i, theta))^2 (unit weights
unless a caller such as GLS supplies them) and share the same stopping rules:

* gradient test: ||J'r||_inf <= tol_grad * (1 + S), declared converged;
* relative-S test: once the relative decrease of S (achieved on the last
  step, or predicted by the linearization for the next one) falls below
  tol_rel_S, a step that cannot decrease S any further ends the run as
  converged. Otherwise iteration continues until the gradient test passes.

Solver failures are reported through ``FitResult.status`` rather than raised;
``FitResult.raise_for_status`` converts them to exceptions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nlfit.core import Dataset, as_theta
from nlfit.errors import LineSearchFailed, NlfitError, NonFiniteEvaluation, SingularNormalEquations
from nlfit.models import ModelSpec, second_derivatives

COND_LIMIT = 1e12
LM_MU_LIMIT = 1e12
LM_MU_FLOOR = 1e-15


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    SINGULAR = "singular_normal_equations"
    LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 100
    tol_rel_S: float = 1e-10
    tol_grad: float = 1e-8
    min_step_scale: float = 2.0**-30
    damping_init: float = 1e-3

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        for name in ("tol_rel_S", "tol_grad", "min_step_scale", "damping_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class TraceEntry:
    theta: NDArray[np.float64]
    s_value: float
    step_scale: float
    # "gn", "newton", "gn_fallback" (NR with indefinite Hessian) or "lm"
    kind: str = "gn"


@dataclass
class FitResult:
    theta_hat: NDArray[np.float64]
    s_value: float
    iterations: int
    status: Status
    trace: list[TraceEntry]
    jacobian_at_hat: NDArray[np.float64]
    method: str
    n: int
    message: str = ""
    converged_by: str | None = None
    weights: NDArray[np.float64] | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def p(self) -> int:
        return self.theta_hat.size

    def raise_for_status(self) -> FitResult:
        if self.status is Status.SINGULAR:
            raise SingularNormalEquations(self.message)
        if self.status is Status.LINE_SEARCH_FAILED:
            raise LineSearchFailed(self.message)
        if self.status is Status.MAX_ITER:
            raise NlfitError(self.message or "iteration limit reached")
        return self


class _Problem:
    """Weighted residuals and Jacobian: sqrt(w) * (y - f), sqrt(w) * J."""

    def __init__(self, model: ModelSpec, data: Dataset, weights: ArrayLike | None):
        self.model = model
        self.data = data
        if weights is None:
            self.sw = None
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (data.n,) or not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be a positive finite vector of length n")
            self.sw = np.sqrt(w)

    def residuals(self, theta: NDArray) -> NDArray:
        r = self.data.y - self.model.mean(theta, self.data.x)
        return r if self.sw is None else self.sw * r

    def s_or_inf(self, theta: NDArray) -> float:
        try:
            r = self.residuals(theta)
        except NonFiniteEvaluation:
            return np.inf
        return float(r @ r)

    def jacobian(self, theta: NDArray) -> NDArray:
        J = self.model.jacobian(theta, self.data.x)
        return J if self.sw is None else self.sw[:, None] * J

    def second(self, theta: NDArray) -> NDArray:
        G = second_derivatives(self.model, theta, self.data.x)
        return G if self.sw is None else self.sw[:, None, None] * G


def condition_number(J: NDArray) -> float:
    """Condition number of J'J, computed from the singular values of J."""
    sv = np.linalg.svd(J, compute_uv=False)
    if sv.size == 0 or sv[-1] == 0:
        return np.inf
    return float((sv[0] / sv[-1]) ** 2)


def gn_step(J: NDArray, r: NDArray) -> NDArray:
    """Gauss-Newton increment (J'J)^-1 J'r, solved by least squares on J."""
    return np.linalg.lstsq(J, r, rcond=None)[0]


def lm_step(J: NDArray, r: NDArray, mu: float) -> NDArray:
    """Solve (J'J + mu diag(J'J)) delta = J'r."""
    A = J.T @ J
    D = np.diag(np.diag(A))
    return np.linalg.solve(A + mu * D, J.T @ r)


def _predicted_decrease(J: NDArray, r: NDArray, delta: NDArray) -> float:
    # decrease of the linearized objective ||r - J delta||^2 for a full step
    Jd = J @ delta
    return float(2.0 * (Jd @ r) - Jd @ Jd)


def _grad_ok(J: NDArray, r: NDArray, s_value: float, tol: float) -> bool:
    return float(np.max(np.abs(J.T @ r))) <= tol * (1.0 + s_value)


def _result(prob, theta, s_value, it, status, trace, method, message="", converged_by=None) -> FitResult:
    try:
        J = prob.jacobian(theta)
    except NonFiniteEvaluation:
        J = np.full((prob.data.n, theta.size), np.nan)
    return FitResult(
        theta_hat=theta,
        s_value=s_value,
        iterations=it,
        status=status,
        trace=trace,
        jacobian_at_hat=J,
        method=method,
        n=prob.data.n,
        message=message,
        converged_by=converged_by,
        weights=None if prob.sw is None else prob.sw**2,
    )


def _check_start(model: ModelSpec, data: Dataset, init: ArrayLike) -> NDArray:
    theta = as_theta(init, model.p).copy()
    if data.n <= model.p:
        raise ValueError(f"need n > p, got n={data.n}, p={model.p}")
    # raises DomainViolation / NonFiniteEvaluation for an invalid start
    model.mean(theta, data.x)
    return theta


def _line_search_run(prob: _Problem, theta: NDArray, opts: SolverOptions, method: str, direction_fn) -> FitResult:
    """Shared loop for GN and NR: direction from ``direction_fn``, step halving from 1."""
    r = prob.residuals(theta)
    s_value = float(r @ r)
    trace = [TraceEntry(theta.copy(), s_value, 0.0, "start")]
    stalled = False
    it = 0
    while True:
        J = prob.jacobian(theta)
        if _grad_ok(J, r, s_value, opts.tol_grad):
            return _result(prob, theta, s_value, it, Status.CONVERGED, trace, method, converged_by="gradient")
        if it >= opts.max_iter:
            return _result(prob, theta, s_value, it, Status.MAX_ITER, trace, method,
                           message=f"no convergence after {opts.max_iter} iterations")
        cond = condition_number(J)
        if not cond <= COND_LIMIT:
            return _result(prob, theta, s_value, it, Status.SINGULAR, trace, method,
                           message=f"cond(J'J) = {cond:.3g} exceeds {COND_LIMIT:.0e}; try levenberg_marquardt")
        delta, kind = direction_fn(theta, J, r)
        lam = 1.0
        while True:
            cand = theta + lam * delta
            s_new = prob.s_or_inf(cand)
            if s_new < s_value:
                break
            lam *= 0.5
            if lam < opts.min_step_scale:
                if stalled or _predicted_decrease(J, r, delta) <= opts.tol_rel_S * s_value:
                    return _result(prob, theta, s_value, it, Status.CONVERGED, trace, method,
                                   converged_by="relative_s")
                return _result(prob, theta, s_value, it, Status.LINE_SEARCH_FAILED, trace, method,
                               message=f"step scale fell below {opts.min_step_scale:.3g} without decreasing S")
        it += 1
        stalled = (s_value - s_new) <= opts.tol_rel_S * s_value
        theta, s_value = cand, s_new
        r = prob.residuals(theta)
        trace.append(TraceEntry(theta.copy(), s_value, lam, kind))


def gauss_newton(
    model: ModelSpec,
    data: Dataset,
    init: ArrayLike,
    opts: SolverOptions | None = None,
    *,
    weights: ArrayLike | None = None,
) -> FitResult:
    """Gauss-Newton with step halving.

    theta <- theta + lambda * delta, delta = (J'J)^-1 J'(y - f), with lambda
    halved from 1 until S strictly decreases.
    """
    opts = opts or SolverOptions()
    theta = _check_start(model, data, init)
    prob = _Problem(model, data, weights)
    return _line_search_run(prob, theta, opts, "gauss_newton", lambda th, J, r: (gn_step(J, r), "gn"))


def newton_raphson(
    model: ModelSpec,
    data: Dataset,
    init: ArrayLike,
    opts: SolverOptions | None = None,
    *,
    weights: ArrayLike | None = None,
) -> FitResult:
    """Full Newton on S with H = 2J'J - 2 sum r_i G_i.

    When H is not positive definite at an iterate the Gauss-Newton matrix
    2J'J is used for that step (trace kind ``gn_fallback``).
    """
    opts = opts or SolverOptions()
    theta = _check_start(model, data, init)
    prob = _Problem(model, data, weights)

    def direction(th, J, r):
        G = prob.second(th)
        H = 2.0 * (J.T @ J) - 2.0 * np.einsum("i,ijk->jk", r, G)
        H = 0.5 * (H + H.T)
        g = 2.0 * (J.T @ r)
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            return gn_step(J, r), "gn_fallback"
        return np.linalg.solve(L.T, np.linalg.solve(L, g)), "newton"

    return _line_search_run(prob, theta, opts, "newton_raphson", direction)


def levenberg_marquardt(
    model: ModelSpec,
    data: Dataset,
    init: ArrayLike,
    opts: SolverOptions | None = None,
    *,
    weights: ArrayLike | None = None,
) -> FitResult:
    """Levenberg-Marquardt with Marquardt's diagonal scaling.

    Solves (J'J + mu diag(J'J)) delta = J'r; mu /= 10 after an accepted step,
    mu *= 10 after a rejected one. Fails only when mu exceeds 1e12.
    """
    opts = opts or SolverOptions()
    theta = _check_start(model, data, init)
    prob = _Problem(model, data, weights)
    method = "levenberg_marquardt"
    mu = opts.damping_init
    r = prob.residuals(theta)
    s_value = float(r @ r)
    trace = [TraceEntry(theta.copy(), s_value, 0.0, "start")]
    stalled = False
    it = 0
    while True:
        J = prob.jacobian(theta)
        if _grad_ok(J, r, s_value, opts.tol_grad):
            return _result(prob, theta, s_value, it, Status.CONVERGED, trace, method, converged_by="gradient")
        if it >= opts.max_iter:
            return _result(prob, theta, s_value, it, Status.MAX_ITER, trace, method,
                           message=f"no convergence after {opts.max_iter} iterations")
        while True:
            try:
                delta = lm_step(J, r, mu)
                cand = theta + delta
                s_new = prob.s_or_inf(cand) if np.all(np.isfinite(cand)) else np.inf
            except np.linalg.LinAlgError:
                s_new = np.inf
            if s_new < s_value:
                break
            mu *= 10.0
            if mu > LM_MU_LIMIT:
                if stalled or _predicted_decrease(J, r, gn_step(J, r)) <= opts.tol_rel_S * s_value:
                    return _result(prob, theta, s_value, it, Status.CONVERGED, trace, method,
                                   converged_by="relative_s")
                return _result(prob, theta, s_value, it, Status.LINE_SEARCH_FAILED, trace, method,
                               message="damping exceeded 1e12 without an accepted step")
        it += 1
        stalled = (s_value - s_new) <= opts.tol_rel_S * s_value
        theta, s_value = cand, s_new
        r = prob.residuals(theta)
        trace.append(TraceEntry(theta.copy(), s_value, mu, "lm"))
        mu = max(mu / 10.0, LM_MU_FLOOR)


SOLVERS = {
    "gn": gauss_newton,
    "nr": newton_raphson,
    "lm": levenberg_marquardt,
}


def fit(model: ModelSpec, data: Dataset, init: ArrayLike, solver: str = "gn",
        opts: SolverOptions | None = None) -> FitResult:
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(model, data, init, opts)
