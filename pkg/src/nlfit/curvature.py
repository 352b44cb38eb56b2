"""Relative intrinsic and parameter-effects curvature of a least-squares fit.

The second-derivative array of the mean function is rotated into the
coordinates defined by the R factor of J = QR, then split into its
projection onto the tangent plane (columns of Q) and the orthogonal normal
component. For a unit direction d in rotated coordinates the curvatures are
||d' A_T d|| and ||d' A_N d||; the summaries are root-mean-squares over a
fixed low-discrepancy set of directions, scaled by s * sqrt(p F).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtri
from scipy.stats import qmc

from nlfit.core import Dataset, as_theta
from nlfit.errors import NotConverged, SingularInformation, SingularJacobian
from nlfit.fdist import f_quantile
from nlfit.inference import InferenceReport
from nlfit.models import ModelSpec, second_derivatives
from nlfit.solvers import COND_LIMIT, FitResult

DEFAULT_DIRECTIONS = 4096


@dataclass(frozen=True)
class CurvatureReport:
    rms_intrinsic: float
    rms_parameter_effects: float
    scaling_radius: float
    alpha: float
    directions_used: int

    def to_dict(self) -> dict:
        return asdict(self)


def unit_directions(p: int, count: int = DEFAULT_DIRECTIONS) -> NDArray[np.float64]:
    """Deterministic low-discrepancy unit vectors on the (p-1)-sphere, shape (count, p).

    p = 2 uses equally spaced angles; p >= 3 maps an unscrambled Halton
    sequence through the normal quantile function and normalizes.
    """
    if p == 1:
        return np.ones((1, 1))
    if p == 2:
        t = 2.0 * np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    u = qmc.Halton(d=p, scramble=False).random(count + 1)[1:]
    z = ndtri(u)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def acceleration_arrays(model: ModelSpec, data: Dataset, theta: ArrayLike) -> tuple[NDArray, NDArray]:
    """Tangential and normal parts of the R^-1-rotated second-derivative array, each (n, p, p)."""
    th = as_theta(theta, model.p)
    J = model.jacobian(th, data.x)
    G = second_derivatives(model, th, data.x)
    Q, R = np.linalg.qr(J)
    d = np.abs(np.diag(R))
    if d.min() == 0 or (d.max() / d.min()) ** 2 > COND_LIMIT:
        raise SingularJacobian(f"R factor of the Jacobian is not invertible for {model.id}")
    Rinv = np.linalg.inv(R)
    A = np.einsum("iab,aj,bk->ijk", G, Rinv, Rinv)
    coef = np.einsum("ia,ijk->ajk", Q, A)
    AT = np.einsum("ia,ajk->ijk", Q, coef)
    return AT, A - AT


def rms_curvatures(
    model: ModelSpec,
    data: Dataset,
    theta_hat: ArrayLike | FitResult,
    alpha: float = 0.05,
    n_directions: int = DEFAULT_DIRECTIONS,
) -> CurvatureReport:
    """RMS relative intrinsic and parameter-effects curvature at the estimate."""
    if isinstance(theta_hat, FitResult):
        if not theta_hat.converged:
            raise NotConverged(f"fit status is {theta_hat.status.value}")
        theta_hat = theta_hat.theta_hat
    th = as_theta(theta_hat, model.p)
    n, p = data.n, model.p
    if n <= p:
        raise ValueError("need n > p")
    r = data.y - model.mean(th, data.x)
    s = math.sqrt(float(r @ r) / (n - p))
    rho = s * math.sqrt(p * f_quantile(alpha, p, n - p))
    AT, AN = acceleration_arrays(model, data, th)
    D = unit_directions(p, n_directions)
    kt = np.linalg.norm(np.einsum("ijk,mj,mk->mi", AT, D, D), axis=1)
    kn = np.linalg.norm(np.einsum("ijk,mj,mk->mi", AN, D, D), axis=1)
    return CurvatureReport(
        rms_intrinsic=float(np.sqrt(np.mean(kn**2))) * rho,
        rms_parameter_effects=float(np.sqrt(np.mean(kt**2))) * rho,
        scaling_radius=rho,
        alpha=alpha,
        directions_used=D.shape[0],
    )


def wald_statistic(fit: FitResult, report: InferenceReport, theta0: ArrayLike) -> float:
    """(theta_hat - theta0)' cov^-1 (theta_hat - theta0) with cov from ``report``."""
    d = fit.theta_hat - as_theta(theta0, fit.p)
    cov = report.covariance
    if not np.all(np.isfinite(cov)) or np.linalg.cond(cov) > COND_LIMIT:
        raise SingularInformation("estimated covariance is not invertible")
    return float(d @ np.linalg.solve(cov, d))
