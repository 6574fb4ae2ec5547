"""Sparse GP with explicit inducing values.

A particle is one flat vector ``[kernel params, mean params, noise, u]`` in
unconstrained coordinates.  Its log joint is

    (N / |B|) * sum_{i in B} log N(y_i | m(x_i) + k_i^T Kzz^-1 (u - m(Z)), s2)
    + log N(u | m(Z), Kzz)
    + log p(hyperparameters)                         (incl. log-Jacobian)

i.e. the deterministic training conditional with the inducing values carried
by the particle, rescaled for minibatches.  Gradients are derived by hand;
see ``_log_joint_impl``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import ConfigError, NumericalError, ShapeError
from .kernels import Kernel, preset_kernel
from .priors import (
    SOFTPLUS,
    Gamma,
    Gaussian,
    LinearMean,
    ParamInfo,
    ZeroMean,
    bind_priors,
    log_prior_total,
    sample_prior,
)

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
NOISE = ParamInfo("likelihood.variance", "noise", SOFTPLUS)


def stable_cholesky(K: np.ndarray, jitter: float = 1e-6, retries: int = 2, growth: float = 100.0):
    """Lower Cholesky factor of ``K + jitter * I``, escalating the jitter.

    Returns ``(L, jitter_used)``.  Tries ``jitter, jitter*growth, ...`` for
    ``retries`` extra attempts before giving up.
    """
    n = K.shape[0]
    eye = np.eye(n)
    j = jitter
    for attempt in range(retries + 1):
        try:
            return cholesky(K + j * eye, lower=True, check_finite=True), j
        except (LinAlgError, ValueError):
            if attempt < retries:
                log.debug("cholesky failed with jitter %.1e, retrying", j)
                j *= growth
    if np.all(np.isfinite(K)):
        eig = np.linalg.eigvalsh(0.5 * (K + K.T))
        diag = f"min eig {eig[0]:.3e}, max eig {eig[-1]:.3e}, min diag {np.min(np.diag(K)):.3e}"
    else:
        diag = "matrix has non-finite entries"
    raise NumericalError(f"Cholesky failed for {n}x{n} matrix after jitter {j:.1e} ({diag})")


@dataclass
class PredictiveOut:
    mean: np.ndarray
    variance: np.ndarray
    n_clamped: int = 0
    cov: np.ndarray | None = None


@dataclass(frozen=True)
class Particle:
    """Unconstrained hyperparameters plus inducing values."""

    unconstrained: np.ndarray
    u: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.unconstrained, self.u])

    def __len__(self) -> int:
        return self.unconstrained.size + self.u.size


@dataclass(frozen=True, eq=False)
class SparseGPModel:
    """Kernel + mean + fixed inducing inputs + Gaussian likelihood.

    The kernel, mean and ``noise_variance`` fields act as templates: they fix
    the structure and supply the values used by :meth:`template_particle`.
    Every evaluation takes its parameter values from a particle vector.
    """

    kernel: Kernel
    mean: LinearMean | ZeroMean
    Z: np.ndarray
    priors: Mapping[str, Gamma | Gaussian] = field(default_factory=dict)
    noise_variance: float = 1.0
    jitter: float = 1e-6

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float, copy=True)
        if Z.ndim != 2 or Z.shape[0] < 1:
            raise ShapeError(f"Z must be a non-empty 2-D array, got shape {Z.shape}")
        if Z.shape[1] != self.mean.input_dim:
            raise ShapeError(f"Z has {Z.shape[1]} columns, mean expects {self.mean.input_dim}")
        Z.flags.writeable = False
        object.__setattr__(self, "Z", Z)
        priors = dict(self.priors) if self.priors else bind_priors(self.hyper_info)
        missing = [p.name for p in self.hyper_info if p.name not in priors]
        if missing:
            raise ConfigError(f"parameters without a prior: {missing}")
        object.__setattr__(self, "priors", priors)

    # -- layout ----------------------------------------------------------
    @property
    def hyper_info(self) -> list[ParamInfo]:
        return self.kernel.param_info() + self.mean.param_info() + [NOISE]

    @property
    def n_kernel(self) -> int:
        return self.kernel.n_params

    @property
    def n_hyper(self) -> int:
        return self.kernel.n_params + self.mean.n_params + 1

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def n_params(self) -> int:
        return self.n_hyper + self.m

    @property
    def input_dim(self) -> int:
        return self.Z.shape[1]

    def param_names(self) -> list[str]:
        return [p.name for p in self.hyper_info] + [f"u[{i}]" for i in range(self.m)]

    def split(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"particle must have {self.n_params} entries, got {vec.shape}")
        nk, nm = self.n_kernel, self.mean.n_params
        kernel = self.kernel.with_unconstrained(vec[:nk])
        mean = self.mean.with_unconstrained(vec[nk : nk + nm])
        raw_noise = vec[nk + nm]
        u = vec[self.n_hyper :]
        return kernel, mean, raw_noise, u

    def template_particle(self, u=None) -> Particle:
        hyper = np.concatenate(
            [
                self.kernel.get_unconstrained(),
                self.mean.get_unconstrained(),
                SOFTPLUS.inverse(np.array([self.noise_variance])),
            ]
        )
        u = np.zeros(self.m) if u is None else np.asarray(u, dtype=float)
        return Particle(hyper, u)

    def constrained_hyper(self, vec) -> dict[str, float]:
        vec = np.asarray(vec, dtype=float)
        return {
            p.name: float(p.transform.forward(v))
            for p, v in zip(self.hyper_info, vec[: self.n_hyper])
        }

    # -- density -----------------------------------------------------------
    def _chol_zz(self, kernel):
        Kzz = kernel.K(self.Z)
        L, _ = stable_cholesky(Kzz, self.jitter)
        return L

    def _log_joint_impl(self, vec, X, y, n_total, need_grad: bool):
        kernel, mean, raw_noise, u = self.split(vec)
        s2 = float(SOFTPLUS.forward(raw_noise))
        Z, m = self.Z, self.m
        L = self._chol_zz(kernel)
        delta = u - mean(Z)
        w = cho_solve((L, True), delta)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        prior_u = -0.5 * float(delta @ w) - 0.5 * logdet - 0.5 * m * _LOG_2PI

        ll = 0.0
        if X is not None:
            X = np.asarray(X, dtype=float)
            y = np.asarray(y, dtype=float).reshape(-1)
            b = X.shape[0]
            if b == 0 or y.shape[0] != b:
                raise ShapeError(f"batch must be non-empty with matching y, got {X.shape}, {y.shape}")
            if n_total is None:
                n_total = b
            if n_total < b:
                raise ConfigError(f"n_total={n_total} smaller than batch size {b}")
            scale = n_total / b
            Kxz = kernel.K(X, Z)
            r = y - mean(X) - Kxz @ w
            rss = float(r @ r)
            ll = scale * (-0.5 * b * (_LOG_2PI + math.log(s2)) - 0.5 * rss / s2)

        hyper = np.asarray(vec[: self.n_hyper], dtype=float)
        lp_hyper, g_hyper = log_prior_total(hyper, self.hyper_info, self.priors)
        total = ll + prior_u + lp_hyper
        if not need_grad:
            return total, None, (ll, prior_u, lp_hyper)

        # adjoints: G_zz = dlogp/dKzz, g = dll/df
        Kinv = cho_solve((L, True), np.eye(m))
        G_zz = 0.5 * (np.outer(w, w) - Kinv)
        grad = np.zeros(self.n_params)
        nk, nm = self.n_kernel, self.mean.n_params
        if X is not None:
            g = scale * r / s2
            v = cho_solve((L, True), Kxz.T @ g)
            G_zz -= np.outer(v, w)
            d_s2 = scale * (-0.5 * b / s2 + 0.5 * rss / s2**2)
            grad[nk + nm] = d_s2 * float(SOFTPLUS.grad(raw_noise))
            grad[nk : nk + nm] = mean.grad(X, g) + mean.grad(Z, w - v)
            for p, dK in enumerate(kernel.grad_params(X, Z)):
                grad[p] = g @ dK @ w
            grad[self.n_hyper :] = v - w
        else:
            grad[nk : nk + nm] = mean.grad(Z, w)
            grad[self.n_hyper :] = -w
        for p, dK in enumerate(kernel.grad_params(Z)):
            grad[p] += np.sum(G_zz * dK)
        grad[: self.n_hyper] += g_hyper
        return total, grad, (ll, prior_u, lp_hyper)

    def log_joint(self, vec, X=None, y=None, n_total=None) -> float:
        """Log joint density of a particle; ``X=None`` drops the likelihood."""
        return self._log_joint_impl(vec, X, y, n_total, need_grad=False)[0]

    def log_joint_terms(self, vec, X=None, y=None, n_total=None) -> tuple[float, float, float]:
        """``(scaled likelihood, log p(u | theta), log p(hyper))``."""
        return self._log_joint_impl(vec, X, y, n_total, need_grad=False)[2]

    def grad_log_joint(self, vec, X=None, y=None, n_total=None) -> np.ndarray:
        return self._log_joint_impl(vec, X, y, n_total, need_grad=True)[1]

    def log_joint_and_grad(self, vec, X=None, y=None, n_total=None) -> tuple[float, np.ndarray]:
        total, grad, _ = self._log_joint_impl(vec, X, y, n_total, need_grad=True)
        return total, grad

    # -- prediction -------------------------------------------------------
    def predict(
        self,
        vec,
        Xstar,
        include_noise: bool = False,
        full_cov: bool = False,
        block: int = 4096,
    ) -> PredictiveOut:
        """Predictive mean and variance of one particle.

        ``include_noise`` adds the observation noise (observation scale);
        otherwise the latent function is returned.
        """
        kernel, mean, raw_noise, u = self.split(vec)
        Xstar = np.asarray(Xstar, dtype=float)
        if Xstar.ndim != 2 or Xstar.shape[1] != self.input_dim:
            raise ShapeError(f"expected (n, {self.input_dim}) test inputs, got {Xstar.shape}")
        L = self._chol_zz(kernel)
        w = cho_solve((L, True), u - mean(self.Z))
        n = Xstar.shape[0]
        mu = np.empty(n)
        var = np.empty(n)
        cov = None
        for start in range(0, n, block):
            xb = Xstar[start : start + block]
            Ksz = kernel.K(xb, self.Z)
            mu[start : start + block] = mean(xb) + Ksz @ w
            V = solve_triangular(L, Ksz.T, lower=True)
            var[start : start + block] = kernel.K_diag(xb) - np.sum(V * V, axis=0)
        if full_cov:
            V = solve_triangular(L, kernel.K(Xstar, self.Z).T, lower=True)
            cov = kernel.K(Xstar) - V.T @ V
        neg = var < 0
        n_clamped = int(np.count_nonzero(neg))
        if n_clamped:
            log.debug("clamped %d negative predictive variances", n_clamped)
            var[neg] = 0.0
        if include_noise:
            s2 = float(SOFTPLUS.forward(raw_noise))
            var = var + s2
            if cov is not None:
                cov = cov + s2 * np.eye(n)
        return PredictiveOut(mu, var, n_clamped, cov)

    # -- initialisation -----------------------------------------------------
    def sample_particle(self, rng: np.random.Generator, u_init=None, u_jitter: float = 0.0) -> np.ndarray:
        """Draw hyperparameters from their priors.

        ``u_init=None`` draws ``u ~ N(m(Z), Kzz)`` under the sampled
        hyperparameters.  Otherwise ``u = u_init + u_jitter * N(0, I)``.
        """
        hyper = sample_prior(self.hyper_info, self.priors, rng)
        if u_init is None:
            vec = np.concatenate([hyper, np.zeros(self.m)])
            kernel, mean, _, _ = self.split(vec)
            L = self._chol_zz(kernel)
            u = mean(self.Z) + L @ rng.standard_normal(self.m)
        else:
            u = np.asarray(u_init, dtype=float) + u_jitter * rng.standard_normal(self.m)
        return np.concatenate([hyper, u])


def build_model(
    Z: np.ndarray,
    n_covariates: int | None = None,
    kernel: str | Kernel = "default",
    mean: str = "linear",
    prior_kinds: Mapping[str, Gamma | Gaussian] | None = None,
    prior_overrides: Mapping[str, Gamma | Gaussian] | None = None,
    jitter: float = 1e-6,
) -> SparseGPModel:
    """Assemble a model over ``lon, lat, time, covariates...`` columns."""
    Z = np.asarray(Z, dtype=float)
    if n_covariates is None:
        n_covariates = Z.shape[1] - 3
    if Z.shape[1] != 3 + n_covariates:
        raise ShapeError(f"Z has {Z.shape[1]} columns, expected {3 + n_covariates}")
    k = preset_kernel(kernel, n_covariates) if isinstance(kernel, str) else kernel
    if mean == "linear":
        mf = LinearMean.zeros(Z.shape[1])
    elif mean == "zero":
        mf = ZeroMean(Z.shape[1])
    else:
        raise ConfigError(f"unknown mean function {mean!r}")
    infos = k.param_info() + mf.param_info() + [NOISE]
    priors = bind_priors(infos, prior_kinds, prior_overrides)
    return SparseGPModel(k, mf, Z, priors, jitter=jitter)


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsemblePrediction:
    samples: np.ndarray  # (n*, J * n_samples)
    per_particle: list[PredictiveOut]
    mean: np.ndarray
    variance: np.ndarray  # mixture variance across particles


def mixture_moments(per_particle: Sequence[PredictiveOut]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the equal-weight mixture of particle predictives."""
    means = np.stack([p.mean for p in per_particle])
    varis = np.stack([p.variance for p in per_particle])
    mu = means.mean(axis=0)
    var = (varis + (means - mu) ** 2).mean(axis=0)
    return mu, var


def predict_ensemble(
    model: SparseGPModel,
    particles,
    Xstar,
    n_samples: int = 0,
    rng: np.random.Generator | None = None,
    include_noise: bool = False,
) -> EnsemblePrediction:
    """Predict with every particle and draw ``n_samples`` marginal samples each.

    Samples are independent across test points (diagonal predictive).
    """
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    if particles.shape[0] < 1:
        raise ConfigError("need at least one particle")
    rng = np.random.default_rng() if rng is None else rng
    outs = [model.predict(p, Xstar, include_noise=include_noise) for p in particles]
    cols = []
    for out in outs:
        if n_samples:
            eps = rng.standard_normal((out.mean.size, n_samples))
            cols.append(out.mean[:, None] + np.sqrt(out.variance)[:, None] * eps)
    n_star = outs[0].mean.size
    samples = np.concatenate(cols, axis=1) if cols else np.empty((n_star, 0))
    mu, var = mixture_moments(outs)
    return EnsemblePrediction(samples, outs, mu, var)
