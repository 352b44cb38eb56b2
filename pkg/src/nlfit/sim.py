"""Simulated Michaelis-Menten data and the experiment drivers built on it.

Every random draw comes from :func:`nlfit.core.make_rng` (Philox-4x64).
Replication ``r`` of a seeded experiment uses the key ``seed ^ r``, so each
replication's data are fixed regardless of execution order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from nlfit.bayes import ChainSpec, metropolis_fit
from nlfit.core import Dataset, make_rng
from nlfit.errors import NlfitError, TooManyFailures
from nlfit.hetero import VarianceModel, gls_fit
from nlfit.inference import (
    build_report,
    enclosing_grid,
    likelihood_region,
    region_area,
    symmetric_difference_area,
    wald_region,
    write_grid_csv,
)
from nlfit.models import get_model
from nlfit.solvers import gauss_newton, levenberg_marquardt

MM = get_model("michaelis_menten")
THETA_STAR = {"mm_gamma": (100.0, 0.05), "mm_normal": (6.0, 5.0)}
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class GeneratorSpec:
    kind: Literal["mm_gamma", "mm_normal"]
    n: int
    seed: int
    theta_star: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in THETA_STAR:
            raise ValueError(f"unknown generator {self.kind!r}; choose from {sorted(THETA_STAR)}")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def theta(self) -> NDArray[np.float64]:
        return np.asarray(self.theta_star if self.theta_star is not None else THETA_STAR[self.kind], dtype=float)


def generate(spec: GeneratorSpec) -> Dataset:
    """Draw x first, then the noise, from one Philox stream keyed by ``spec.seed``.

    mm_gamma: x = |N(0, 20^2)|, noise Gamma(shape 10, scale 0.25).
    mm_normal: x ~ U(1, 100), noise N(0, 1).
    """
    rng = make_rng(spec.seed)
    if spec.kind == "mm_gamma":
        x = np.abs(rng.normal(0.0, 20.0, spec.n))
        eps = rng.gamma(10.0, 0.25, spec.n)
    else:
        x = rng.uniform(1.0, 100.0, spec.n)
        eps = rng.normal(0.0, 1.0, spec.n)
    return Dataset(x, MM.mean(spec.theta, x) + eps)


def generate_heteroscedastic(n: int, seed: int, cv: float = 0.2,
                             theta_star: tuple[float, float] = (6.0, 5.0)) -> Dataset:
    """Michaelis-Menten data with noise sd = cv * mean and x log-uniform on (0.1, 100)."""
    rng = make_rng(seed)
    x = np.exp(rng.uniform(math.log(0.1), math.log(100.0), n))
    mu = MM.mean(np.asarray(theta_star), x)
    return Dataset(x, mu + cv * mu * rng.standard_normal(n))


def thread_count() -> int:
    raw = os.environ.get("NLFIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"NLFIT_THREADS must be a positive integer, got {raw!r}") from None


def _map_ordered(fn, items):
    threads = thread_count()
    if threads == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # map preserves input order


@dataclass(frozen=True)
class CoverageResult:
    nominal: float
    empirical: float
    replications: int
    mc_stderr: float
    failures: int
    kind: str
    n: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _coverage_result(hits: list[bool | None], alpha: float, kind: str, n: int, seed: int) -> CoverageResult:
    reps = len(hits)
    failures = sum(h is None for h in hits)
    if failures > MAX_FAILURE_RATE * reps:
        raise TooManyFailures(f"{failures} of {reps} replications failed to fit")
    used = reps - failures
    emp = sum(bool(h) for h in hits if h is not None) / used
    return CoverageResult(
        nominal=1.0 - alpha,
        empirical=emp,
        replications=used,
        mc_stderr=math.sqrt(emp * (1.0 - emp) / used),
        failures=failures,
        kind=kind,
        n=n,
        seed=seed,
    )


def coverage_experiment(kind: Literal["wald", "likelihood"], n: int, reps: int, alpha: float,
                        seed: int) -> CoverageResult:
    """Fraction of mm_normal replications whose region contains theta* = (6, 5)."""
    if kind not in ("wald", "likelihood"):
        raise ValueError(f"unknown region kind {kind!r}")
    if reps < 100:
        raise ValueError("reps must be >= 100")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    theta_star = np.asarray(THETA_STAR["mm_normal"])

    def one(r: int) -> bool | None:
        data = generate(GeneratorSpec("mm_normal", n, seed ^ r))
        try:
            fit = gauss_newton(MM, data, theta_star)
            if not fit.converged:
                return None
            if kind == "wald":
                region = wald_region(fit, build_report(fit, data, alpha))
            else:
                region = likelihood_region(fit, MM, data, alpha)
        except NlfitError:
            return None
        return region.contains(theta_star)

    return _coverage_result(_map_ordered(one, range(reps)), alpha, kind, n, seed)


def gls_coverage_experiment(n: int = 200, reps: int = 300, alpha: float = 0.05, seed: int = 0,
                            cv: float = 0.2, gamma: float = 2.0) -> dict:
    """Wald-interval coverage of theta_1 from gls_fit and from unweighted Gauss-Newton."""
    theta_star = np.asarray(THETA_STAR["mm_normal"])
    vm = VarianceModel("power_of_mean", gamma)

    def covers(fit, data) -> bool | None:
        if not fit.converged:
            return None
        try:
            lo, hi = build_report(fit, data, alpha).wald_intervals[0]
        except NlfitError:
            return None
        return bool(lo <= theta_star[0] <= hi)

    def one(r: int) -> tuple[bool | None, bool | None]:
        data = generate_heteroscedastic(n, seed ^ r, cv)
        try:
            g = covers(gls_fit(MM, data, vm, theta_star), data)
        except NlfitError:
            g = None
        try:
            u = covers(gauss_newton(MM, data, theta_star), data)
        except NlfitError:
            u = None
        return g, u

    rows = _map_ordered(one, range(reps))
    return {
        "gls": _coverage_result([g for g, _ in rows], alpha, "gls_wald_theta1", n, seed),
        "unweighted": _coverage_result([u for _, u in rows], alpha, "ols_wald_theta1", n, seed),
    }


# ---------------------------------------------------------------------------
# two-start comparison of least squares and posterior sampling
# ---------------------------------------------------------------------------

TABLE1_INITS = ((10.0, 3.0), (50.0, 0.1))


@dataclass
class Table1Row:
    method: str
    init: tuple[float, float]
    estimate: list[float] | None = None
    intervals: list[list[float]] | None = None
    status: str = "ok"
    detail: dict = field(default_factory=dict)


def _nls_row(data: Dataset, init) -> Table1Row:
    row = Table1Row("nls", tuple(init))
    try:
        fit = gauss_newton(MM, data, init)
        if not fit.converged:
            row.detail["gauss_newton_status"] = fit.status.value
            fit = levenberg_marquardt(MM, data, init)
        row.detail["solver"] = fit.method
        row.detail["iterations"] = fit.iterations
        row.detail["converged_by"] = fit.converged_by
        row.status = fit.status.value
        row.estimate = fit.theta_hat.tolist()
        if fit.converged:
            row.intervals = build_report(fit, data).wald_intervals.tolist()
    except NlfitError as exc:
        row.status = f"error: {type(exc).__name__}: {exc}"
    return row


def _bayes_row(data: Dataset, init, seed: int, iterations: int, burn_in: int) -> Table1Row:
    row = Table1Row("bayesian", tuple(init))
    try:
        summary, _ = metropolis_fit(MM, data, ChainSpec(tuple(init), seed, iterations, burn_in))
        row.estimate = summary.mean.tolist()
        row.intervals = summary.credible_intervals.tolist()
        row.detail["acceptance_rate"] = summary.acceptance_rate
        row.detail["ess"] = summary.ess.tolist()
        row.status = "converged"
    except NlfitError as exc:
        row.status = f"error: {type(exc).__name__}: {exc}"
    return row


def table1_experiment(seed: int, n: int = 100, iterations: int = 50_000, burn_in: int = 10_000) -> dict:
    """NLS (Gauss-Newton, LM fallback) and Metropolis fits from both starts on one mm_gamma dataset.

    Chains use the data seed as their key, so both starts share proposal draws.
    """
    data = generate(GeneratorSpec("mm_gamma", n, seed))
    rows = [_nls_row(data, init) for init in TABLE1_INITS]
    rows += [_bayes_row(data, init, seed, iterations, burn_in) for init in TABLE1_INITS]
    return {
        "seed": seed,
        "n": n,
        "theta_star": list(THETA_STAR["mm_gamma"]),
        "rows": [asdict(r) for r in rows],
    }


def interval_width(report: dict, method: str, init, param: int = 0) -> float:
    for row in report["rows"]:
        if row["method"] == method and tuple(row["init"]) == tuple(init) and row["intervals"]:
            lo, hi = row["intervals"][param]
            return hi - lo
    return math.nan


# ---------------------------------------------------------------------------
# Wald versus likelihood region shapes
# ---------------------------------------------------------------------------

def figure1_experiment(n: int, seed: int, alpha: float = 0.05, shape: tuple[int, int] = (201, 201)) -> dict:
    """Wald ellipse and likelihood contour for one mm_normal dataset, plus their area mismatch.

    ``symmetric_difference_area`` is the absolute area of points inside exactly
    one region; ``relative_difference`` divides it by the Wald-region area.
    """
    data = generate(GeneratorSpec("mm_normal", n, seed))
    fit = gauss_newton(MM, data, THETA_STAR["mm_normal"]).raise_for_status()
    report = build_report(fit, data, alpha)
    wald = wald_region(fit, report)
    coarse = likelihood_region(fit, MM, data, alpha)
    grid = enclosing_grid(fit.theta_hat, report.std_errors, coarse, shape)
    lik = likelihood_region(fit, MM, data, alpha, grid)
    sym = symmetric_difference_area(wald, lik, grid)
    wald_area = region_area(wald, grid)
    return {
        "n": n,
        "seed": seed,
        "alpha": alpha,
        "theta_hat": fit.theta_hat.tolist(),
        "grid": {"lo": [float(v) for v in grid.lo], "hi": [float(v) for v in grid.hi], "shape": list(grid.shape)},
        "wald_area": wald_area,
        "likelihood_area": region_area(lik, grid),
        "symmetric_difference_area": sym,
        "relative_difference": sym / wald_area if wald_area > 0 else math.nan,
        "wald_contains_hat": wald.contains(fit.theta_hat),
        "likelihood_contains_hat": lik.contains(fit.theta_hat),
        "wald_grid_csv": write_grid_csv(wald),
        "likelihood_grid_csv": write_grid_csv(lik),
    }
