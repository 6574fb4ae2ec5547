"""Stein variational sparse Gaussian process regression for spatiotemporal data."""

__version__ = "0.1.0"

from .analysis import (
    GridPrediction,
    IntegratedMean,
    SpaceTimeGrid,
    difference_surface,
    integrated_mean,
    location_series,
    percent_change,
    predict_grid,
)
from .artifact import FittedEnsemble
from .config import RunConfig
from .data import Dataset, Standardizer, ingest
from .errors import ConfigError, DataError, DomainError, NumericalError, StvgpError
from .kdpp import KDPPConfig, init_inducing, kdpp_sample
from .kernels import default_kernel, preset_kernel
from .pipeline import fit_dataset
from .sparse_gp import SparseGPModel, build_model, predict_ensemble
from .svgd import SVGDConfig, fit, fit_gp
