"""Nonlinear regression toolkit: least-squares solvers, inference, curvature, GLMs and simulation."""

from nlfit.core import Dataset, make_rng
from nlfit.glm import GlmFit, irls_fit
from nlfit.hetero import KernelSpec, VarianceModel, gls_fit, nadaraya_watson
from nlfit.inference import (
    ConfidenceRegion,
    GridSpec,
    InferenceReport,
    build_report,
    likelihood_region,
    wald_region,
)
from nlfit.curvature import CurvatureReport, rms_curvatures
from nlfit.fdist import f_quantile
from nlfit.models import CATALOG, ModelSpec, get_model
from nlfit.solvers import FitResult, SolverOptions, Status, fit, gauss_newton, levenberg_marquardt, newton_raphson

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "ConfidenceRegion",
    "CurvatureReport",
    "Dataset",
    "FitResult",
    "GlmFit",
    "GridSpec",
    "InferenceReport",
    "KernelSpec",
    "ModelSpec",
    "SolverOptions",
    "Status",
    "VarianceModel",
    "build_report",
    "f_quantile",
    "fit",
    "gauss_newton",
    "get_model",
    "gls_fit",
    "irls_fit",
    "levenberg_marquardt",
    "likelihood_region",
    "make_rng",
    "nadaraya_watson",
    "newton_raphson",
    "rms_curvatures",
    "wald_region",
]
