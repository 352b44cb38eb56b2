"""Exponential-family GLMs fitted by iteratively reweighted least squares.

For g(mu) = eta = X beta and natural parameter theta = h(eta), with
h = (b')^-1 o g^-1, the working weights are W_i = h'(eta_i) / (g'(mu_i) phi)
= 1 / (V(mu_i) g'(mu_i)^2 phi) and each step solves the weighted
least-squares problem for the working response z = eta + g'(mu)(y - mu):

    beta <- (X'WX)^-1 X'W z

which is Fisher scoring, and coincides with Newton-Raphson for canonical links.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, logit, xlogy

from nlfit.errors import SeparationWarning, SingularWeightedSystem
from nlfit.solvers import COND_LIMIT, SolverOptions

Array = NDArray[np.float64]
ArrFn = Callable[[Array], Array]

_DEV_ROUNDOFF = 16 * np.finfo(float).eps
SEPARATION_ETA = 30.0


@dataclass(frozen=True)
class LinkSpec:
    id: str
    g: ArrFn = field(repr=False)
    ginv: ArrFn = field(repr=False)
    g_prime: ArrFn = field(repr=False)


LINKS: dict[str, LinkSpec] = {
    "identity": LinkSpec("identity", lambda m: m, lambda e: e, lambda m: np.ones_like(m)),
    "log": LinkSpec("log", np.log, np.exp, lambda m: 1.0 / m),
    "logit": LinkSpec("logit", logit, expit, lambda m: 1.0 / (m * (1.0 - m))),
    "inverse": LinkSpec("inverse", lambda m: 1.0 / m, lambda e: 1.0 / e, lambda m: -1.0 / m**2),
}


@dataclass(frozen=True)
class Family:
    """Exponential family with cumulant b, written in terms of the natural parameter."""

    id: str
    b: ArrFn = field(repr=False)
    b_prime: ArrFn = field(repr=False)
    b_second: ArrFn = field(repr=False)
    natural: ArrFn = field(repr=False)  # (b')^-1: mean -> natural parameter
    canonical_link: str
    valid_mu: Callable[[Array], NDArray[np.bool_]] = field(repr=False)
    valid_y: Callable[[Array], NDArray[np.bool_]] = field(repr=False)
    unit_deviance: Callable[[Array, Array], Array] = field(repr=False)
    start_mu: ArrFn = field(repr=False)
    fixed_dispersion: bool = False

    def variance(self, mu: Array) -> Array:
        return self.b_second(self.natural(mu))


def _binomial_dev(y, mu):
    return 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))


def _poisson_dev(y, mu):
    return 2.0 * (xlogy(y, y / mu) - (y - mu))


def _gamma_dev(y, mu):
    return 2.0 * (-np.log(y / mu) + (y - mu) / mu)


FAMILIES: dict[str, Family] = {
    "gaussian": Family(
        "gaussian",
        b=lambda t: 0.5 * t**2,
        b_prime=lambda t: t,
        b_second=lambda t: np.ones_like(t),
        natural=lambda m: m,
        canonical_link="identity",
        valid_mu=lambda m: np.isfinite(m),
        valid_y=lambda y: np.isfinite(y),
        unit_deviance=lambda y, m: (y - m) ** 2,
        start_mu=lambda y: y.astype(float),
    ),
    "binomial": Family(
        "binomial",
        b=lambda t: np.logaddexp(0.0, t),
        b_prime=expit,
        b_second=lambda t: expit(t) * expit(-t),
        natural=logit,
        canonical_link="logit",
        valid_mu=lambda m: (m > 0) & (m < 1),
        valid_y=lambda y: (y >= 0) & (y <= 1),
        unit_deviance=_binomial_dev,
        start_mu=lambda y: (y + 0.5) / 2.0,
        fixed_dispersion=True,
    ),
    "poisson": Family(
        "poisson",
        b=np.exp,
        b_prime=np.exp,
        b_second=np.exp,
        natural=np.log,
        canonical_link="log",
        valid_mu=lambda m: m > 0,
        valid_y=lambda y: y >= 0,
        unit_deviance=_poisson_dev,
        start_mu=lambda y: y + 0.1,
        fixed_dispersion=True,
    ),
    "gamma": Family(
        "gamma",
        b=lambda t: -np.log(-t),
        b_prime=lambda t: -1.0 / t,
        b_second=lambda t: 1.0 / t**2,
        natural=lambda m: -1.0 / m,
        canonical_link="inverse",
        valid_mu=lambda m: m > 0,
        valid_y=lambda y: y > 0,
        unit_deviance=_gamma_dev,
        start_mu=lambda y: y.astype(float),
    ),
}


def get_family(family: str | Family) -> Family:
    if isinstance(family, Family):
        return family
    try:
        return FAMILIES[family]
    except KeyError:
        raise KeyError(f"unknown family {family!r}; known: {sorted(FAMILIES)}") from None


def get_link(link: str | LinkSpec | None, family: Family) -> LinkSpec:
    if isinstance(link, LinkSpec):
        return link
    key = family.canonical_link if link is None else link
    try:
        return LINKS[key]
    except KeyError:
        raise KeyError(f"unknown link {key!r}; known: {sorted(LINKS)}") from None


@dataclass
class GlmFit:
    beta_hat: Array
    eta: Array
    mu: Array
    weights: Array
    iterations: int
    status: str
    deviance: float
    dispersion: float
    family: str
    link: str
    deviance_trace: list[float] = field(default_factory=list, repr=False)
    beta_trace: list[Array] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class _Glm:
    def __init__(self, family, link, x, y, trials, phi):
        self.family = get_family(family)
        self.link = get_link(link, self.family)
        self.X = np.asarray(x, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(y, dtype=float)
        n, q = self.X.shape
        if self.y.shape != (n,):
            raise ValueError("y must be a vector with one entry per design row")
        if n <= q:
            raise ValueError(f"need more observations than coefficients (n={n}, q={q})")
        if not np.all(self.family.valid_y(self.y)):
            raise ValueError(f"responses outside the {self.family.id} support")
        self.prior = np.ones(n) if trials is None else np.asarray(trials, dtype=float)
        if self.prior.shape != (n,) or np.any(self.prior <= 0):
            raise ValueError("trials must be positive, one per observation")
        if self.family.fixed_dispersion:
            phi = 1.0
        self.phi = 1.0 if phi is None else float(phi)
        if not self.phi > 0:
            raise ValueError("dispersion must be positive")

    def mean(self, eta: Array) -> Array:
        with np.errstate(all="ignore"):
            return self.link.ginv(eta)

    def valid(self, mu: Array) -> bool:
        return bool(np.all(np.isfinite(mu)) and np.all(self.family.valid_mu(mu)))

    def h_prime(self, mu: Array) -> Array:
        # d theta / d eta = 1 / (b''(theta) g'(mu))
        return 1.0 / (self.family.variance(mu) * self.link.g_prime(mu))

    def working_weights(self, mu: Array) -> Array:
        return self.prior * self.h_prime(mu) / (self.link.g_prime(mu) * self.phi)

    def deviance(self, mu: Array) -> float:
        return float(np.sum(self.prior * self.family.unit_deviance(self.y, mu)))

    def loglik(self, beta: Array) -> float:
        """sum w (y theta - b(theta)) / phi, dropping c(y, phi)."""
        mu = self.mean(self.X @ beta)
        th = self.family.natural(mu)
        return float(np.sum(self.prior * (self.y * th - self.family.b(th))) / self.phi)

    def valid_start(self) -> Array | None:
        """A coefficient vector with valid means: least squares on g(start means), else intercept-only."""
        target = self.link.g(self.family.start_mu(self.y))
        beta = np.linalg.lstsq(self.X, target, rcond=None)[0]
        if self.valid(self.mean(self.X @ beta)):
            return beta
        ones = np.flatnonzero(np.all(self.X == 1.0, axis=0))
        ybar = np.sum(self.prior * self.y) / np.sum(self.prior)
        if ones.size and self.family.valid_mu(np.array([ybar])).all():
            beta = np.zeros(self.X.shape[1])
            beta[ones[0]] = float(self.link.g(np.array([ybar]))[0])
            if self.valid(self.mean(self.X @ beta)):
                return beta
        return None

    def gradient(self, beta: Array) -> Array:
        mu = self.mean(self.X @ beta)
        return self.X.T @ (self.prior * (self.y - mu) * self.h_prime(mu) / self.phi)

    def wls(self, mu: Array, eta: Array) -> Array:
        W = self.working_weights(mu)
        z = eta + self.link.g_prime(mu) * (self.y - mu)
        XtW = self.X.T * W
        A = XtW @ self.X
        cond = np.linalg.cond(A)
        if not cond <= COND_LIMIT:
            raise SingularWeightedSystem(
                f"cond(X'WX) = {cond:.3g}; weights near zero (fitted means close to the support boundary?)"
            )
        return np.linalg.solve(A, XtW @ z)


def glm_gradient(family, link, x, y, beta, *, trials=None, phi=None) -> Array:
    """Score vector X' diag((y - mu) h'(eta) / phi): equal to sum (y_i - mu_i) mu'(eta_i) / sigma_i^2 x_i."""
    m = _Glm(family, link, x, y, trials, phi)
    return m.gradient(np.asarray(beta, dtype=float))


def glm_loglik(family, link, x, y, beta, *, trials=None, phi=None) -> float:
    m = _Glm(family, link, x, y, trials, phi)
    return m.loglik(np.asarray(beta, dtype=float))


def irls_step(family, link, x, y, beta, *, trials=None, phi=None) -> Array:
    """One unguarded IRLS update from ``beta``."""
    m = _Glm(family, link, x, y, trials, phi)
    beta = np.asarray(beta, dtype=float)
    eta = m.X @ beta
    return m.wls(m.mean(eta), eta)


def irls_fit(
    family: str | Family,
    link: str | LinkSpec | None,
    x: ArrayLike,
    y: ArrayLike,
    opts: SolverOptions | None = None,
    *,
    beta_init: ArrayLike | None = None,
    trials: ArrayLike | None = None,
    phi: float | None = None,
) -> GlmFit:
    """Fit a GLM by IRLS with deviance-guarded step halving.

    Starts from beta = 0 (or ``beta_init``). When the starting means fall
    outside the family's mean space (e.g. gamma with the inverse link at
    beta = 0) it starts from a least-squares fit of g(data-based means) or an
    intercept-only fit, whichever has valid means; failing both, the first
    step is taken unguarded from the data-based means.

    Converges when the relative change in deviance drops below
    ``opts.tol_rel_S`` on two consecutive iterations and the score norm is
    below ``opts.tol_grad * (1 + deviance)``, or when the deviance stops moving.
    """
    opts = opts or SolverOptions()
    m = _Glm(family, link, x, y, trials, phi)
    q = m.X.shape[1]
    beta = np.zeros(q) if beta_init is None else np.asarray(beta_init, dtype=float).copy()
    if beta.shape != (q,):
        raise ValueError(f"beta_init must have length {q}")
    eta = m.X @ beta
    mu = m.mean(eta)
    if not m.valid(mu):
        ref = m.valid_start()
        if ref is not None:
            beta = ref
            eta = m.X @ beta
            mu = m.mean(eta)
            dev = m.deviance(mu)
        else:
            mu = m.family.start_mu(m.y)
            eta = m.link.g(mu)
            dev = np.inf
    else:
        dev = m.deviance(mu)
    dev_trace = [dev]
    beta_trace = [beta.copy()]
    status = "max_iter"
    it = passes = 0
    while it < opts.max_iter:
        new = m.wls(mu, eta)
        lam = 1.0
        while True:
            cand = beta + lam * (new - beta) if np.isfinite(dev) else new
            eta_c = m.X @ cand
            mu_c = m.mean(eta_c)
            dev_c = m.deviance(mu_c) if m.valid(mu_c) else np.inf
            # an increase at the rounding level of the deviance sum is not an increase
            if dev_c <= dev + _DEV_ROUNDOFF * (abs(dev) + 1.0) or not np.isfinite(dev):
                if np.isfinite(dev_c):
                    break
            lam *= 0.5
            if lam < opts.min_step_scale:
                if m.link.id == "logit" and np.any(np.abs(eta) > SEPARATION_ETA):
                    status = "separated"
                    break
                raise SingularWeightedSystem("IRLS step halving could not reduce the deviance")
        if status == "separated":
            break
        it += 1
        beta, eta, mu = cand, eta_c, mu_c
        change = abs(dev - dev_c)
        dev_prev, dev = dev, dev_c
        dev_trace.append(dev)
        beta_trace.append(beta.copy())
        # the deviance change is quadratic in the score, so one passing test leaves the
        # score near sqrt(tol); a second consecutive pass sits past one more Newton-like step
        small = np.isfinite(dev_prev) and change <= opts.tol_rel_S * (abs(dev) + opts.tol_rel_S)
        passes = passes + 1 if small else 0
        if small and change == 0.0:
            status = "converged"
            break
        if passes >= 2 and np.linalg.norm(m.gradient(beta)) <= opts.tol_grad * (1.0 + abs(dev)):
            status = "converged"
            break
    W = m.working_weights(mu)
    if m.link.id == "logit" and np.any(np.abs(eta) > SEPARATION_ETA):
        warnings.warn("fitted |eta| > 30 under the logit link: data look (quasi-)separated", SeparationWarning,
                      stacklevel=2)
    elif np.any(W <= 1e-10 * np.max(W)):
        warnings.warn("some IRLS weights are ~0; fitted means sit at the edge of the support",
                      SeparationWarning, stacklevel=2)
    n = m.X.shape[0]
    if m.family.fixed_dispersion:
        dispersion = 1.0
    else:
        pearson = np.sum(m.prior * (m.y - mu) ** 2 / m.family.variance(mu))
        dispersion = float(pearson / (n - q))
    return GlmFit(
        beta_hat=beta,
        eta=eta,
        mu=mu,
        weights=W,
        iterations=it,
        status=status,
        deviance=float(dev),
        dispersion=dispersion if math.isfinite(dispersion) else float("nan"),
        family=m.family.id,
        link=m.link.id,
        deviance_trace=dev_trace,
        beta_trace=beta_trace,
    )
