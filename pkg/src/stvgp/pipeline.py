"""Fit orchestration shared by the CLI and library users.

``fit_dataset`` runs inducing-point selection, particle initialisation and
SVGD on an ingested :class:`~stvgp.data.Dataset` and returns a
:class:`~stvgp.artifact.FittedEnsemble` ready to save or predict with.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .artifact import FittedEnsemble, model_spec
from .config import InitSection, RunConfig
from .data import Dataset
from .kdpp import init_inducing
from .sparse_gp import SparseGPModel, build_model
from .svgd import FitResult, SVGDConfig, fit_gp, particle_seeds

log = logging.getLogger(__name__)


def initial_particles(
    model: SparseGPModel,
    u_data: np.ndarray,
    init: InitSection,
    config: SVGDConfig,
) -> np.ndarray:
    """Starting particles, one independent seed stream per particle.

    ``u_data`` holds the standardized responses at the inducing rows; it is
    ignored by the ``prior`` strategy.
    """
    seeds = particle_seeds(config.seed, config.n_particles)
    rngs = [np.random.default_rng(s) for s in seeds]
    if init.strategy == "prior":
        return np.stack([model.sample_particle(r) for r in rngs])
    if init.strategy == "data":
        return np.stack([model.sample_particle(r, u_data, init.u_jitter) for r in rngs])
    base = model.template_particle(u_data)
    out = []
    for r in rngs:
        hyper = base.unconstrained + init.hyper_jitter * r.standard_normal(model.n_hyper)
        u = base.u + init.u_jitter * r.standard_normal(model.m)
        out.append(np.concatenate([hyper, u]))
    return np.stack(out)


def select_inducing(ds: Dataset, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    t0 = time.perf_counter()
    Z, rows = init_inducing(ds.X, cfg.kdpp.build(cfg.seed))
    log.info("selected %d inducing inputs in %.1fs", len(rows), time.perf_counter() - t0)
    return Z, rows


def model_for(ds: Dataset, Z: np.ndarray, cfg: RunConfig) -> SparseGPModel:
    return build_model(
        Z,
        n_covariates=ds.n_covariates,
        kernel=cfg.model.kernel,
        mean=cfg.model.mean,
        prior_kinds=cfg.model.prior_kinds(),
        prior_overrides=cfg.model.overrides(),
        jitter=cfg.model.jitter,
    )


@dataclass
class FitOutcome:
    fitted: FittedEnsemble
    result: FitResult
    seconds: float


def fit_dataset(ds: Dataset, cfg: RunConfig, callback=None) -> FitOutcome:
    """k-DPP inducing inputs, then SVGD over all particles."""
    t0 = time.perf_counter()
    Z, rows = select_inducing(ds, cfg)
    model = model_for(ds, Z, cfg)
    svgd_cfg = cfg.svgd.build(cfg.seed)
    init = initial_particles(model, ds.y[rows], cfg.init, svgd_cfg)
    log.info(
        "fitting %d particles x %d parameters on %d rows", svgd_cfg.n_particles, model.n_params, ds.n
    )
    result = fit_gp(model, ds.X, ds.y, svgd_cfg, init=init, callback=callback)
    fitted = FittedEnsemble(
        model=model,
        particles=result.ensemble.particles,
        stats=ds.stats,
        time_origin=ds.time_origin,
        covariates=ds.covariates,
        model_spec=model_spec(model, cfg.model.kernel, cfg.model.mean, ds.n_covariates),
        config=cfg.to_dict(),
        inducing_rows=rows,
    )
    return FitOutcome(fitted, result, time.perf_counter() - t0)
