"""Random-walk Metropolis sampling of (theta, log sigma) for normal-error regression.

Priors are flat on theta over the model domain and log-uniform on sigma
(flat on log sigma), so the log posterior is

    -n log sigma - S(theta) / (2 sigma^2)

up to a constant, and its theta-mode is the least-squares estimate.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nlfit.core import Dataset, as_theta, make_rng
from nlfit.errors import NonFiniteEvaluation, ZeroAcceptance
from nlfit.models import ModelSpec

Array = NDArray[np.float64]

LOG_SIGMA_PROPOSAL_SD = 0.1


def default_proposal_sd(init: ArrayLike) -> Array:
    return 0.02 * np.abs(np.asarray(init, dtype=float)) + 1e-3


@dataclass(frozen=True)
class ChainSpec:
    init: tuple[float, ...]
    seed: int
    iterations: int = 50_000
    burn_in: int = 10_000
    proposal_sd: tuple[float, ...] | None = None  # p entries for theta, then one for log sigma
    sigma0: float | None = None

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.proposal_sd is not None:
            sd = np.asarray(self.proposal_sd, dtype=float)
            if sd.size != len(self.init) + 1:
                raise ValueError(f"proposal_sd needs {len(self.init) + 1} entries (theta..., log sigma)")
            if not np.all(sd > 0):
                raise ValueError("proposal_sd entries must be positive")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    def proposal(self) -> Array:
        if self.proposal_sd is not None:
            return np.asarray(self.proposal_sd, dtype=float)
        return np.append(default_proposal_sd(self.init), LOG_SIGMA_PROPOSAL_SD)


@dataclass
class PosteriorSummary:
    mean: Array
    credible_intervals: Array  # (p, 2): 2.5% and 97.5% quantiles
    acceptance_rate: float
    ess: Array
    sigma_mean: float
    mc_stderr: Array = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "credible_intervals": self.credible_intervals.tolist(),
            "acceptance_rate": self.acceptance_rate,
            "ess": self.ess.tolist(),
            "sigma_mean": self.sigma_mean,
            "mc_stderr": self.mc_stderr.tolist(),
        }


@dataclass
class Chain:
    samples: Array  # (iterations, d): every state, including burn-in
    log_post: Array
    moved: NDArray[np.bool_]
    burn_in: int

    def kept(self) -> Array:
        return self.samples[self.burn_in:]


def rwm_sample(
    log_target: Callable[[Array], float],
    init: ArrayLike,
    proposal_sd: ArrayLike,
    iterations: int,
    rng: np.random.Generator,
) -> tuple[Array, Array, NDArray[np.bool_]]:
    """Gaussian random-walk Metropolis; returns states, log densities and a moved flag per step.

    A proposal only counts as a move if it was accepted and differs from the
    current state, so a degenerate proposal scale shows up as zero acceptance.
    """
    x = np.asarray(init, dtype=float).copy()
    sd = np.asarray(proposal_sd, dtype=float)
    lp = log_target(x)
    if not math.isfinite(lp):
        raise ValueError("initial state has zero posterior density")
    steps = rng.standard_normal((iterations, x.size)) * sd
    log_u = np.log(rng.random(iterations))
    out = np.empty((iterations, x.size))
    lps = np.empty(iterations)
    moved = np.zeros(iterations, dtype=bool)
    for t in range(iterations):
        cand = x + steps[t]
        lc = log_target(cand)
        if lc - lp >= log_u[t] and not np.array_equal(cand, x):
            x, lp = cand, lc
            moved[t] = True
        out[t] = x
        lps[t] = lp
    return out, lps, moved


def log_posterior(model: ModelSpec, data: Dataset) -> Callable[[Array], float]:
    n, p = data.n, model.p

    def lp(state: Array) -> float:
        theta, log_sigma = state[:p], state[p]
        if not np.all(model.in_domain(theta, data.x)):
            return -np.inf
        try:
            r = data.y - model.mean(theta, data.x)
        except NonFiniteEvaluation:
            return -np.inf
        return -n * log_sigma - 0.5 * float(r @ r) * math.exp(-2.0 * log_sigma)

    return lp


def effective_sample_size(x: ArrayLike) -> float:
    """ESS from Geyer's initial positive sequence of autocorrelation pairs."""
    x = np.asarray(x, dtype=float)
    m = x.size
    xc = x - x.mean()
    var = float(xc @ xc) / m
    if var == 0.0:
        return 0.0
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:m] / (m * var)
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(m / max(tau, 1e-12))


def summarize(kept: Array, moved: NDArray[np.bool_], p: int) -> PosteriorSummary:
    theta = kept[:, :p]
    rate = float(np.mean(moved))
    if rate == 0.0:
        raise ZeroAcceptance("no proposal was accepted after burn-in; reduce the proposal scale")
    ess = np.array([effective_sample_size(theta[:, j]) for j in range(p)])
    sd = theta.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mcse = np.where(ess > 0, sd / np.sqrt(ess), np.inf)
    return PosteriorSummary(
        mean=theta.mean(axis=0),
        credible_intervals=np.quantile(theta, [0.025, 0.975], axis=0).T,
        acceptance_rate=rate,
        ess=ess,
        sigma_mean=float(np.exp(kept[:, p]).mean()),
        mc_stderr=mcse,
    )


def metropolis_fit(model: ModelSpec, data: Dataset, spec: ChainSpec) -> tuple[PosteriorSummary, Chain]:
    theta0 = as_theta(spec.init, model.p)
    model.check_domain(theta0, data.x)
    r = data.y - model.mean(theta0, data.x)
    sigma0 = spec.sigma0 if spec.sigma0 is not None else math.sqrt(max(float(r @ r), 1e-300) / data.n)
    init = np.append(theta0, math.log(sigma0))
    samples, lps, moved = rwm_sample(log_posterior(model, data), init, spec.proposal(),
                                     spec.iterations, make_rng(spec.seed))
    chain = Chain(samples, lps, moved, spec.burn_in)
    return summarize(chain.kept(), moved[spec.burn_in:], model.p), chain


def write_chain_csv(chain: Chain, param_names: tuple[str, ...], path: str | Path | None = None) -> str:
    """Chain as CSV: iteration, theta..., sigma, log_post (all iterations, burn-in included)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", *param_names, "sigma", "log_post"])
    p = len(param_names)
    for i, (row, lp) in enumerate(zip(chain.samples, chain.log_post)):
        w.writerow([i, *(format(v, ".17g") for v in row[:p]), format(math.exp(row[p]), ".17g"),
                    format(lp, ".17g")])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
