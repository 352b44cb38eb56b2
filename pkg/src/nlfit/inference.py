"""Asymptotic inference for least-squares fits.

Covers the variance estimates s^2 and sigma^2_MLE, the asymptotic covariance
s^2 (J'J)^-1, per-parameter Wald intervals, the ellipsoidal Wald region and
the likelihood (sum-of-squares contour) region, plus grid utilities used to
draw and compare region boundaries.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Callable

import numpy as np
from contourpy import LineType, contour_generator
from numpy.typing import ArrayLike, NDArray

from nlfit.core import Dataset, as_theta
from nlfit.errors import GridTooCoarse, NonFiniteEvaluation, NotConverged, SingularInformation
from nlfit.fdist import f_cdf, f_quantile  # noqa: F401  (re-exported)
from nlfit.models import ModelSpec
from nlfit.solvers import COND_LIMIT, FitResult, condition_number

Array = NDArray[np.float64]


@dataclass(frozen=True)
class InferenceReport:
    theta_hat: Array
    s_value: float
    n: int
    p: int
    s2: float
    sigma2_mle: float
    covariance: Array
    std_errors: Array
    wald_intervals: Array  # shape (p, 2)
    alpha: float

    @property
    def level(self) -> float:
        return 1.0 - self.alpha


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _information(fit: FitResult) -> Array:
    J = fit.jacobian_at_hat
    if not np.all(np.isfinite(J)):
        raise SingularInformation("Jacobian at the estimate is not finite")
    if condition_number(J) > COND_LIMIT:
        raise SingularInformation("J'J at the estimate is numerically singular")
    return J.T @ J


def build_report(fit: FitResult, data: Dataset | None = None, alpha: float = 0.05) -> InferenceReport:
    """Variance estimates, covariance and normal-theory Wald intervals.

    s2 = S/(n - p), sigma2_mle = S/n, cov = s2 (J'J)^-1 with J evaluated at
    the estimate; intervals are theta_j +/- z_{alpha/2} sqrt(cov_jj).
    """
    _check_alpha(alpha)
    if not fit.converged:
        raise NotConverged(f"fit status is {fit.status.value}: {fit.message}")
    n = fit.n if data is None else data.n
    p = fit.p
    if n <= p:
        raise ValueError("need n > p")
    A = _information(fit)
    s2 = fit.s_value / (n - p)
    cov = s2 * np.linalg.inv(A)
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    intervals = np.column_stack([fit.theta_hat - z * se, fit.theta_hat + z * se])
    return InferenceReport(
        theta_hat=fit.theta_hat.copy(),
        s_value=fit.s_value,
        n=n,
        p=p,
        s2=s2,
        sigma2_mle=fit.s_value / n,
        covariance=cov,
        std_errors=se,
        wald_intervals=intervals,
        alpha=alpha,
    )


@dataclass(frozen=True)
class GridSpec:
    """Rectangle [lo1, hi1] x [lo2, hi2] sampled at ``shape`` = (n1, n2) points."""

    lo: tuple[float, float]
    hi: tuple[float, float]
    shape: tuple[int, int] = (201, 201)

    def __post_init__(self) -> None:
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise ValueError("grid rectangle must have lo < hi in both coordinates")
        if min(self.shape) < 2:
            raise ValueError("grid needs at least 2 points per axis")

    @classmethod
    def around(cls, center: ArrayLike, half_width: ArrayLike, shape: tuple[int, int] = (201, 201)) -> GridSpec:
        c = np.asarray(center, dtype=float)
        w = np.asarray(half_width, dtype=float)
        return cls(lo=(c[0] - w[0], c[1] - w[1]), hi=(c[0] + w[0], c[1] + w[1]), shape=shape)

    def axes(self) -> tuple[Array, Array]:
        return (np.linspace(self.lo[0], self.hi[0], self.shape[0]),
                np.linspace(self.lo[1], self.hi[1], self.shape[1]))

    def points(self) -> Array:
        """All grid points, theta1 varying fastest; shape (n2 * n1, 2)."""
        a1, a2 = self.axes()
        T1, T2 = np.meshgrid(a1, a2)
        return np.column_stack([T1.ravel(), T2.ravel()])

    @property
    def cell_area(self) -> float:
        return ((self.hi[0] - self.lo[0]) / (self.shape[0] - 1)) * ((self.hi[1] - self.lo[1]) / (self.shape[1] - 1))


@dataclass
class ConfidenceRegion:
    kind: str
    level: float
    threshold: float
    theta_hat: Array
    contains_fn: Callable[[Array], bool] = field(repr=False)
    boundary_grid: Array | None = None
    segments: list[Array] = field(default_factory=list, repr=False)
    statistic_fn: Callable[[Array], float] | None = field(default=None, repr=False)
    # statistic already evaluated on a grid (likelihood regions built with a grid)
    surface: tuple[GridSpec, Array] | None = field(default=None, repr=False)

    def contains(self, theta: ArrayLike) -> bool:
        return bool(self.contains_fn(np.asarray(theta, dtype=float)))

    def statistic(self, theta: ArrayLike) -> float:
        """Value compared against ``threshold`` (quadratic form or S)."""
        return float(self.statistic_fn(np.asarray(theta, dtype=float)))

    def membership(self, points: ArrayLike) -> NDArray[np.bool_]:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([self.contains_fn(t) for t in pts], dtype=bool)

    def metadata(self) -> dict:
        return {"kind": self.kind, "level": self.level, "threshold": self.threshold}


def region_threshold_factor(alpha: float, n: int, p: int) -> float:
    """1 + p/(n - p) F^alpha_{p, n-p}: the multiple of S(theta_hat) bounding the likelihood region."""
    return 1.0 + p / (n - p) * f_quantile(alpha, p, n - p)


def wald_region(fit: FitResult, report: InferenceReport, alpha: float | None = None,
                n_angles: int = 360) -> ConfidenceRegion:
    """Ellipsoid (theta - theta_hat)' J'J (theta - theta_hat) <= p s^2 F^alpha_{p,n-p}.

    For p = 2 the boundary is traced at ``n_angles`` angles through the
    eigendecomposition of J'J.
    """
    alpha = report.alpha if alpha is None else alpha
    _check_alpha(alpha)
    A = _information(fit)
    n, p = report.n, report.p
    thr = p * report.s2 * f_quantile(alpha, p, n - p)
    th_hat = fit.theta_hat.copy()

    def qform(theta: Array) -> float:
        d = theta - th_hat
        return float(d @ A @ d)

    boundary = None
    if p == 2:
        lam, V = np.linalg.eigh(A)
        if np.any(lam <= 0):
            raise SingularInformation("J'J is not positive definite")
        t = 2.0 * np.pi * np.arange(n_angles) / n_angles
        unit = np.vstack([np.cos(t), np.sin(t)])
        boundary = (th_hat[:, None] + math.sqrt(thr) * (V @ (unit / np.sqrt(lam)[:, None]))).T
    return ConfidenceRegion(
        kind="wald",
        level=1.0 - alpha,
        threshold=thr,
        theta_hat=th_hat,
        contains_fn=lambda th: qform(th) <= thr,
        boundary_grid=boundary,
        segments=[] if boundary is None else [boundary],
        statistic_fn=qform,
    )


def _s_or_inf(model: ModelSpec, data: Dataset, theta: Array) -> float:
    try:
        r = data.y - model.mean(theta, data.x)
    except NonFiniteEvaluation:
        return np.inf
    return float(r @ r)


def s_surface(model: ModelSpec, data: Dataset, grid: GridSpec) -> Array:
    """S(theta) on the grid, shape (n2, n1); non-finite points become +inf."""
    a1, a2 = grid.axes()
    Z = np.empty((a2.size, a1.size))
    th = np.empty(2)
    for j, t2 in enumerate(a2):
        th[1] = t2
        for i, t1 in enumerate(a1):
            th[0] = t1
            Z[j, i] = _s_or_inf(model, data, th)
    return Z


def _contours(grid: GridSpec, Z: Array, level: float) -> list[Array]:
    a1, a2 = grid.axes()
    inside = Z <= level
    if inside.all() or not inside.any():
        raise GridTooCoarse("S - threshold has no sign change on the grid; enlarge or refine it")
    zz = np.ma.masked_invalid(Z)
    gen = contour_generator(x=a1, y=a2, z=zz, line_type=LineType.Separate)
    lines = [np.asarray(seg, dtype=float) for seg in gen.lines(level) if len(seg) > 1]
    if not lines:
        raise GridTooCoarse("no threshold crossing found on the grid")
    return lines


def likelihood_region(
    fit: FitResult,
    model: ModelSpec,
    data: Dataset,
    alpha: float = 0.05,
    grid: GridSpec | None = None,
    *,
    threshold_factor: float | None = None,
) -> ConfidenceRegion:
    """Region {theta : S(theta) <= S(theta_hat)(1 + p/(n-p) F^alpha_{p,n-p})}.

    ``threshold_factor`` replaces the F-calibrated multiple by a caller-chosen
    constant c, giving the "exact" region S(theta) <= c S(theta_hat).
    The boundary is extracted by marching squares when ``grid`` is given
    (two-parameter models only).
    """
    _check_alpha(alpha)
    if not fit.converged:
        raise NotConverged(f"fit status is {fit.status.value}: {fit.message}")
    n, p = data.n, model.p
    factor = region_threshold_factor(alpha, n, p) if threshold_factor is None else float(threshold_factor)
    if factor <= 0:
        raise ValueError("threshold factor must be positive")
    thr = fit.s_value * factor
    th_hat = fit.theta_hat.copy()

    def s_of(theta: Array) -> float:
        return _s_or_inf(model, data, as_theta(theta, p))

    boundary = None
    segments: list[Array] = []
    surface = None
    if grid is not None:
        if p != 2:
            raise ValueError(f"boundary grid requires p=2, model {model.id} has p={p}")
        Z = s_surface(model, data, grid)
        segments = _contours(grid, Z, thr)
        boundary = np.vstack(segments)
        surface = (grid, Z)
    return ConfidenceRegion(
        kind="likelihood",
        level=1.0 - alpha,
        threshold=thr,
        theta_hat=th_hat,
        contains_fn=lambda th: s_of(th) <= thr,
        boundary_grid=boundary,
        segments=segments,
        statistic_fn=s_of,
        surface=surface,
    )


def enclosing_grid(center: ArrayLike, scale: ArrayLike, region: ConfidenceRegion,
                   shape: tuple[int, int] = (201, 201), start: float = 4.0, max_tries: int = 8) -> GridSpec:
    """Grid centred at ``center`` with half-widths ``start * scale``, widened 1.5x
    until no edge point belongs to ``region``."""
    half = start * np.asarray(scale, dtype=float)
    grid = GridSpec.around(center, half, shape)
    for _ in range(max_tries):
        a1, a2 = grid.axes()
        edge = np.vstack([
            np.column_stack([a1, np.full_like(a1, a2[0])]),
            np.column_stack([a1, np.full_like(a1, a2[-1])]),
            np.column_stack([np.full_like(a2, a1[0]), a2]),
            np.column_stack([np.full_like(a2, a1[-1]), a2]),
        ])
        if not region.membership(edge).any():
            return grid
        half = 1.5 * half
        grid = GridSpec.around(center, half, shape)
    return grid


def membership_grid(region: ConfidenceRegion, grid: GridSpec) -> NDArray[np.bool_]:
    """Membership of every grid point, shape (n2, n1)."""
    if region.surface is not None and region.surface[0] == grid:
        return region.surface[1] <= region.threshold
    return region.membership(grid.points()).reshape(grid.shape[1], grid.shape[0])


def region_area(region: ConfidenceRegion, grid: GridSpec) -> float:
    return float(membership_grid(region, grid).sum()) * grid.cell_area


def symmetric_difference_area(a: ConfidenceRegion, b: ConfidenceRegion, grid: GridSpec) -> float:
    """Area of the points in exactly one of the two regions, by grid counting."""
    return float(np.sum(membership_grid(a, grid) != membership_grid(b, grid))) * grid.cell_area


def log_likelihood(model: ModelSpec, theta: ArrayLike, sigma2: float, data: Dataset) -> float:
    """Normal log-likelihood l = -S/(2 sigma^2) - (n/2) log(2 pi sigma^2)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    r = data.y - model.mean(as_theta(theta, model.p), data.x)
    return -float(r @ r) / (2.0 * sigma2) - 0.5 * data.n * math.log(2.0 * math.pi * sigma2)


def profile_log_likelihood(model: ModelSpec, theta: ArrayLike, data: Dataset) -> float:
    """l(theta, S(theta)/n): the log-likelihood maximized over sigma^2."""
    r = data.y - model.mean(as_theta(theta, model.p), data.x)
    s = float(r @ r)
    n = data.n
    if s == 0:
        return math.inf
    return -0.5 * n * (math.log(2.0 * math.pi * s / n) + 1.0)


# ---------------------------------------------------------------------------
# boundary grid serialization: one "# {json}" metadata line, then theta1,theta2
# ---------------------------------------------------------------------------

def format_float(v: float) -> str:
    return format(float(v), ".17g")


def write_grid_csv(region: ConfidenceRegion, path: str | Path | None = None) -> str:
    if region.boundary_grid is None:
        raise ValueError("region has no boundary grid")
    buf = io.StringIO()
    buf.write("# " + json.dumps({k: (format_float(v) if isinstance(v, float) else v)
                                 for k, v in region.metadata().items()}) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta1", "theta2"])
    for t1, t2 in region.boundary_grid:
        w.writerow([format_float(t1), format_float(t2)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_grid_csv(source: str | Path) -> tuple[dict, Array]:
    """Parse a boundary grid written by :func:`write_grid_csv` (path or text)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    lines = text.splitlines()
    meta: dict = {}
    if lines and lines[0].startswith("#"):
        raw = json.loads(lines[0][1:].strip())
        meta = {k: (float(v) if k in ("level", "threshold") else v) for k, v in raw.items()}
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows or rows[0] != ["theta1", "theta2"]:
        raise ValueError("grid CSV must have a theta1,theta2 header")
    pts = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float).reshape(-1, 2)
    return meta, pts
