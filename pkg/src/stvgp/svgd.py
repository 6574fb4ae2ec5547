"""Stein variational gradient descent with per-particle Adam.

Each iteration computes, for every particle ``x_i``,

    phi(x_i) = 1/J sum_j [ k(x_j, x_i) grad log p(x_j) + grad_{x_j} k(x_j, x_i) ]

with an RBF kernel ``k(a, b) = exp(-|a - b|^2 / (2 h^2))`` whose bandwidth is
re-estimated every iteration by the median rule, and then moves each particle
*up* ``phi`` with Adam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)

BANDWIDTH_FLOOR_SQ = 1e-8
DEFAULT_SCHEDULE = ((0.01, 500), (0.005, 500), (0.001, 500))


class Target(Protocol):
    """Anything SVGD can move particles towards.

    ``n_data`` is the number of observations to minibatch over; 0 means the
    target takes no data and ``batch`` is always ``None``.
    """

    n_data: int

    def log_prob_and_grad(self, x: np.ndarray, batch) -> tuple[float, np.ndarray]: ...


@dataclass
class SVGDConfig:
    n_particles: int = 10
    schedule: Sequence[tuple[float, int]] = DEFAULT_SCHEDULE
    batch_size: int = 250
    bandwidth: str | float = "median"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        self.schedule = tuple((float(lr), int(n)) for lr, n in self.schedule)
        if self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1")
        if not self.schedule:
            raise ConfigError("empty step-size schedule")
        rates = [lr for lr, _ in self.schedule]
        if any(lr <= 0 for lr in rates) or any(b > a for a, b in zip(rates, rates[1:])):
            raise ConfigError(f"step sizes must be positive and non-increasing, got {rates}")
        if any(n < 0 for _, n in self.schedule):
            raise ConfigError("negative iteration count in schedule")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.bandwidth != "median":
            try:
                h = float(self.bandwidth)
            except (TypeError, ValueError):
                raise ConfigError(f"bandwidth must be 'median' or a number, got {self.bandwidth!r}") from None
            if h <= 0:
                raise ConfigError("fixed bandwidth must be positive")
            self.bandwidth = h

    @property
    def n_iterations(self) -> int:
        return sum(n for _, n in self.schedule)

    def stage_at(self, iteration: int) -> tuple[int, float]:
        """(stage index, step size) for a 0-based iteration."""
        end = 0
        for s, (lr, n) in enumerate(self.schedule):
            end += n
            if iteration < end:
                return s, lr
        return len(self.schedule) - 1, self.schedule[-1][0]

    def to_dict(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "schedule": [list(s) for s in self.schedule],
            "batch_size": self.batch_size,
            "bandwidth": self.bandwidth,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "log_every": self.log_every,
        }


# ---------------------------------------------------------------------------
# Particle kernel
# ---------------------------------------------------------------------------


def particle_kernel(a, b, bandwidth: float) -> tuple[float, np.ndarray]:
    """RBF value ``exp(-|a-b|^2 / 2h^2)`` and its gradient w.r.t. ``a``."""
    a = np.asarray(a, dtype=float)
    diff = a - np.asarray(b, dtype=float)
    k = math.exp(-float(diff @ diff) / (2.0 * bandwidth**2))
    return k, -diff / bandwidth**2 * k


def median_bandwidth(particles) -> float:
    """``h = sqrt(median pairwise squared distance / log(J + 1))``."""
    x = np.atleast_2d(np.asarray(particles, dtype=float))
    J = x.shape[0]
    if J < 2:
        return 1.0
    h2 = float(np.median(pdist(x, "sqeuclidean"))) / math.log(J + 1)
    return math.sqrt(max(h2, BANDWIDTH_FLOOR_SQ))


def svgd_direction(particles, scores, bandwidth: float):
    """Return ``(phi, attraction, repulsion)``, each of shape (J, D)."""
    x = np.asarray(particles, dtype=float)
    J = x.shape[0]
    sq = squareform(pdist(x, "sqeuclidean")) if J > 1 else np.zeros((1, 1))
    K = np.exp(-sq / (2.0 * bandwidth**2))
    attraction = K @ scores / J
    # sum_j grad_{x_j} k(x_j, x_i) = sum_j K_ij (x_i - x_j) / h^2
    repulsion = (K.sum(axis=1)[:, None] * x - K @ x) / (bandwidth**2 * J)
    return attraction + repulsion, attraction, repulsion


# ---------------------------------------------------------------------------
# Ensemble and update
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    particles: np.ndarray  # (J, D)
    iteration: int = 0
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if self.particles.shape[0] < 1:
            raise ConfigError("ensemble needs at least one particle")
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.particles)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.particles)

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]


def adam_update(x, m, v, direction, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam ascent step along ``direction``; ``t`` is 1-based."""
    m = beta1 * m + (1.0 - beta1) * direction
    v = beta2 * v + (1.0 - beta2) * direction**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return x + lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class StepRecord:
    iteration: int
    stage: int
    step_size: float
    bandwidth: float
    mean_log_prob: float


def svgd_step(ensemble: Ensemble, target: Target, batch, config: SVGDConfig) -> tuple[Ensemble, StepRecord]:
    """Advance every particle by one SVGD + Adam step."""
    x = ensemble.particles
    J = x.shape[0]
    logps = np.empty(J)
    scores = np.empty_like(x)
    for i in range(J):
        logps[i], scores[i] = target.log_prob_and_grad(x[i], batch)
        if not np.all(np.isfinite(scores[i])):
            raise NumericalError(
                f"iteration {ensemble.iteration}: particle {i} has a non-finite score "
                "(attraction term)"
            )
    h = median_bandwidth(x) if config.bandwidth == "median" else float(config.bandwidth)
    phi, attraction, repulsion = svgd_direction(x, scores, h)
    if not np.all(np.isfinite(phi)):
        for term, arr in (("attraction", attraction), ("repulsion", repulsion)):
            bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
            if bad.size:
                raise NumericalError(
                    f"iteration {ensemble.iteration}: non-finite {term} term for particle {bad[0]}"
                )
        raise NumericalError(f"iteration {ensemble.iteration}: non-finite SVGD direction")
    stage, lr = config.stage_at(ensemble.iteration)
    t = ensemble.iteration + 1
    new_x, m, v = adam_update(
        x, ensemble.adam_m, ensemble.adam_v, phi, t, lr, config.beta1, config.beta2, config.eps
    )
    record = StepRecord(ensemble.iteration, stage, lr, h, float(np.mean(logps)))
    return Ensemble(new_x, t, m, v), record


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


class BatchSampler:
    """Shuffle once per epoch and hand out consecutive slices.

    A trailing slice shorter than ``batch_size`` is dropped so every batch
    has the same size.  With ``batch_size >= n`` every batch is the full,
    ordered index set.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = int(n)
        self.batch_size = min(int(batch_size), self.n)
        self.rng = rng
        self._perm = np.arange(self.n)
        self._pos = self.n  # forces a shuffle on first use

    def next(self) -> np.ndarray:
        if self.batch_size >= self.n:
            return np.arange(self.n)
        if self._pos + self.batch_size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        out = self._perm[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return out


def batch_rng(seed: int) -> np.random.Generator:
    """RNG used for minibatch order; distinct stream from particle init."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def particle_seeds(seed: int, n_particles: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed, spawn_key=(0,)).spawn(n_particles)


@dataclass
class FitResult:
    ensemble: Ensemble
    trace: list[StepRecord] = field(default_factory=list)

    def trace_array(self) -> np.ndarray:
        return np.array([r.mean_log_prob for r in self.trace])


def fit(
    target: Target,
    init_particles,
    config: SVGDConfig,
    callback: Callable[[Ensemble, StepRecord], None] | None = None,
) -> FitResult:
    """Run the full step-size schedule from ``init_particles`` (J, D)."""
    ensemble = Ensemble(np.array(init_particles, dtype=float, copy=True))
    sampler = BatchSampler(target.n_data, config.batch_size, batch_rng(config.seed)) if target.n_data else None
    trace = []
    for _ in range(config.n_iterations):
        batch = sampler.next() if sampler is not None else None
        ensemble, rec = svgd_step(ensemble, target, batch, config)
        trace.append(rec)
        if config.log_every and (rec.iteration % config.log_every == 0 or rec.iteration == config.n_iterations - 1):
            log.info(
                "iter %d stage %d lr %.4g bandwidth %.4g mean log joint %.6g",
                rec.iteration, rec.stage, rec.step_size, rec.bandwidth, rec.mean_log_prob,
            )
        if callback is not None:
            callback(ensemble, rec)
    return FitResult(ensemble, trace)


class GPTarget:
    """Minibatched log joint of a sparse GP over a fixed dataset."""

    def __init__(self, model, X: np.ndarray, y: np.ndarray):
        self.model = model
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        self.n_data = self.X.shape[0]

    def log_prob_and_grad(self, x, batch):
        idx = np.arange(self.n_data) if batch is None else batch
        return self.model.log_joint_and_grad(x, self.X[idx], self.y[idx], self.n_data)


def init_gp_particles(model, config: SVGDConfig, u_init=None, u_jitter: float = 0.0) -> np.ndarray:
    """One prior draw per particle, each from its own seed stream."""
    seeds = particle_seeds(config.seed, config.n_particles)
    return np.stack(
        [model.sample_particle(np.random.default_rng(s), u_init, u_jitter) for s in seeds]
    )


def fit_gp(model, X, y, config: SVGDConfig, init=None, u_init=None, u_jitter: float = 0.0, callback=None) -> FitResult:
    """Fit a sparse GP.  ``init`` overrides the prior-draw initialisation."""
    if init is None:
        init = init_gp_particles(model, config, u_init, u_jitter)
    return fit(GPTarget(model, X, y), init, config, callback)
