"""Heteroscedastic nonlinear regression and kernel smoothing.

``gls_fit`` alternates weighted Gauss-Newton fits with a refresh of the
weights from a variance model evaluated at the current fitted means.
``nadaraya_watson`` is the locally weighted average of the responses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from nlfit.core import Dataset, as_theta
from nlfit.errors import DegenerateWeights, EmptyNeighborhood
from nlfit.models import ModelSpec
from nlfit.solvers import FitResult, SolverOptions, Status, gauss_newton

OUTER_TOL = 1e-8
MAX_OUTER = 50


@dataclass(frozen=True)
class VarianceModel:
    kind: Literal["constant", "power_of_mean", "user_weights"] = "constant"
    gamma: float = 0.0
    weights: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "power_of_mean", "user_weights"):
            raise ValueError(f"unknown variance model kind {self.kind!r}")
        if self.kind == "user_weights":
            if self.weights is None:
                raise ValueError("user_weights requires a weights vector")
            w = np.asarray(self.weights, dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("supplied weights must be strictly positive and finite")
            object.__setattr__(self, "weights", w)

    def weights_for(self, mu: NDArray) -> NDArray:
        """Inverse-variance weights at fitted means ``mu``."""
        if self.kind == "constant":
            return np.ones_like(mu)
        if self.kind == "user_weights":
            return self.weights
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            w = np.abs(mu) ** (-self.gamma)
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(w) & (w > 0)))[0])
            raise DegenerateWeights(f"weight for observation {bad} is {w[bad]} (fitted mean {mu[bad]})")
        return w


def gls_fit(
    model: ModelSpec,
    data: Dataset,
    vm: VarianceModel,
    init: ArrayLike,
    opts: SolverOptions | None = None,
) -> FitResult:
    """Iteratively reweighted Gauss-Newton.

    The returned FitResult carries the final weights; its ``s_value`` and
    ``jacobian_at_hat`` are the weighted ones, so ``build_report`` gives the
    weighted-least-squares covariance. ``iterations`` counts outer cycles.
    """
    opts = opts or SolverOptions()
    theta = as_theta(init, model.p).copy()
    if vm.kind == "constant":
        return gauss_newton(model, data, theta, opts)
    if vm.kind == "user_weights":
        if vm.weights.shape != (data.n,):
            raise ValueError(f"need {data.n} weights, got {vm.weights.shape[0]}")
        return gauss_newton(model, data, theta, opts, weights=vm.weights)
    w = vm.weights_for(model.mean(theta, data.x))
    trace = []
    res = None
    for cycle in range(1, MAX_OUTER + 1):
        res = gauss_newton(model, data, theta, opts, weights=w)
        trace.extend(res.trace if not trace else res.trace[1:])
        if not res.converged:
            res.trace = trace
            res.iterations = cycle
            res.method = "gls"
            return res
        change = float(np.max(np.abs(res.theta_hat - theta)))
        theta = res.theta_hat
        if change < OUTER_TOL:
            res.trace = trace
            res.iterations = cycle
            res.method = "gls"
            return res
        w = vm.weights_for(model.mean(theta, data.x))
    res.trace = trace
    res.iterations = MAX_OUTER
    res.method = "gls"
    res.status = Status.MAX_ITER
    res.message = f"weights did not settle within {MAX_OUTER} outer cycles"
    return res


@dataclass(frozen=True)
class KernelSpec:
    kernel: Literal["gaussian", "epanechnikov"] = "gaussian"
    bandwidth: float = 1.0

    def __post_init__(self) -> None:
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError("bandwidth must be positive and finite")


def kernel_weights(query_x: ArrayLike, data: Dataset, spec: KernelSpec) -> NDArray[np.float64]:
    """Normalized weights w_i(x), one row per query point."""
    q = np.asarray(query_x, dtype=float)
    q = q.reshape(-1, data.k) if data.k > 1 else q.reshape(-1, 1)
    u = np.linalg.norm(q[:, None, :] - data.x[None, :, :], axis=2) / spec.bandwidth
    if spec.kernel == "gaussian":
        logk = -0.5 * u**2
        return np.exp(logk - logsumexp(logk, axis=1, keepdims=True))
    k = np.where(u < 1.0, 0.75 * (1.0 - u**2), 0.0)
    tot = k.sum(axis=1, keepdims=True)
    if np.any(tot == 0):
        i = int(np.flatnonzero(tot[:, 0] == 0)[0])
        raise EmptyNeighborhood(f"no observation within bandwidth {spec.bandwidth} of query {q[i].tolist()}")
    return k / tot


def nadaraya_watson(query_x: ArrayLike, data: Dataset, spec: KernelSpec) -> float | NDArray[np.float64]:
    """Kernel-weighted average of y at one query point (scalar) or many (vector)."""
    w = kernel_weights(query_x, data, spec)
    est = w @ data.y
    if np.ndim(query_x) == 0 or (data.k > 1 and np.ndim(query_x) == 1):
        return float(est[0])
    return est
