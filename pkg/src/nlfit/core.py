"""Datasets, residual evaluation and finite-difference derivative oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nlfit.errors import DataError, NonFiniteEvaluation

if TYPE_CHECKING:
    from nlfit.models import ModelSpec

_EPS = np.finfo(float).eps
# central first differences balance truncation (h^2) against rounding (eps / h)
_CBRT_EPS = _EPS ** (1.0 / 3.0)
# second differences balance truncation (h^2) against rounding (eps / h^2)
_QUART_EPS = _EPS**0.25


def make_rng(seed: int) -> np.random.Generator:
    """The package's only PRNG: Philox-4x64 (counter-based) keyed by the 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


@dataclass(frozen=True)
class Dataset:
    """n observations: an (n, k) predictor matrix and a length-n response.

    A 1-D ``x`` is promoted to a single predictor column.
    """

    x: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or y.ndim != 1:
            raise DataError(f"x must be 1-D or 2-D and y 1-D, got {x.shape} and {y.shape}")
        if y.size < 1:
            raise DataError("dataset needs at least one observation")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains NaN or infinite entries")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class EvalBundle:
    """Residuals, Jacobian and objective at one parameter point."""

    residuals: NDArray[np.float64]
    jacobian: NDArray[np.float64]
    s_value: float


def as_theta(theta: ArrayLike, p: int | None = None) -> NDArray[np.float64]:
    """Validate a parameter vector (finite, length ``p`` when given)."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.ndim != 1 or th.size < 1:
        raise DataError(f"theta must be a non-empty vector, got shape {th.shape}")
    if p is not None and th.size != p:
        raise DataError(f"theta has length {th.size}, model requires {p}")
    if not np.all(np.isfinite(th)):
        raise DataError("theta contains NaN or infinite entries")
    return th


def residuals(model: ModelSpec, theta: ArrayLike, data: Dataset) -> NDArray[np.float64]:
    th = as_theta(theta, model.p)
    return data.y - model.mean(th, data.x)


def residual_sum_squares(model: ModelSpec, theta: ArrayLike, data: Dataset) -> float:
    """S(theta) = sum_i (y_i - f(x_i, theta))^2.

    Raises :class:`NonFiniteEvaluation` when the mean function is singular at
    ``theta`` for some observation.
    """
    r = residuals(model, theta, data)
    return float(r @ r)


def evaluate_bundle(model: ModelSpec, theta: ArrayLike, data: Dataset) -> EvalBundle:
    th = as_theta(theta, model.p)
    r = residuals(model, th, data)
    J = model.jacobian(th, data.x)
    return EvalBundle(residuals=r, jacobian=J, s_value=float(r @ r))


def _safe_mean(model: ModelSpec, theta: NDArray, x: NDArray) -> NDArray:
    f = model.mean(theta, x)
    if not np.all(np.isfinite(f)):
        raise NonFiniteEvaluation(f"{model.id}: non-finite mean at perturbed theta={theta!r}")
    return f


def fd_steps(theta: NDArray, base: float = _CBRT_EPS) -> NDArray:
    """Per-coordinate steps base * max(|theta_j|, 1); never shrinks below ``base``."""
    return base * np.maximum(np.abs(theta), 1.0)


def finite_diff_jacobian(model: ModelSpec, theta: ArrayLike, data: Dataset | NDArray) -> NDArray[np.float64]:
    """Central-difference Jacobian of the mean function, shape (n, p).

    Step for coordinate j is eps^(1/3) * max(|theta_j|, 1).
    ``data`` may be a :class:`Dataset` or a bare predictor matrix.
    """
    th = as_theta(theta, model.p)
    x = data.x if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    h = fd_steps(th)
    cols = []
    for j in range(th.size):
        e = np.zeros_like(th)
        e[j] = h[j]
        cols.append((_safe_mean(model, th + e, x) - _safe_mean(model, th - e, x)) / (2.0 * h[j]))
    return np.column_stack(cols)


def finite_diff_second_array(
    model: ModelSpec,
    theta: ArrayLike,
    data: Dataset | NDArray,
    *,
    return_raw: bool = False,
) -> NDArray[np.float64] | tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Central second differences of the mean function, shape (n, p, p).

    Each G_i is computed entry by entry and then symmetrized. With
    ``return_raw=True`` the unsymmetrized array is returned as well.
    """
    th = as_theta(theta, model.p)
    x = data.x if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    p = th.size
    h = fd_steps(th, _QUART_EPS)
    f0 = _safe_mean(model, th, x)
    raw = np.empty((f0.size, p, p))

    def f(*shifts: tuple[int, float]) -> NDArray:
        t = th.copy()
        for j, s in shifts:
            t[j] += s
        return _safe_mean(model, t, x)

    for j in range(p):
        raw[:, j, j] = (f((j, h[j])) - 2.0 * f0 + f((j, -h[j]))) / h[j] ** 2
        for k in range(p):
            if k == j:
                continue
            num = f((j, h[j]), (k, h[k])) - f((j, h[j]), (k, -h[k])) - f((j, -h[j]), (k, h[k])) + f((j, -h[j]), (k, -h[k]))
            raw[:, j, k] = num / (4.0 * h[j] * h[k])
    sym = 0.5 * (raw + raw.transpose(0, 2, 1))
    if return_raw:
        return sym, raw
    return sym
