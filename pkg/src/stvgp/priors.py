"""Mean functions, prior densities and positivity transforms.

Every learned quantity lives in an unconstrained space during inference.
Positive parameters (variances, lengthscales, noise) pass through a clipped
softplus; everything else uses the identity.  ``log_prior_total`` returns the
density over the *unconstrained* coordinates, i.e. it includes the log-Jacobian
of the transform so that the SVGD target is a proper density on the space the
particles actually move in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, gammaln

from .errors import ConfigError, DomainError, ShapeError

SOFTPLUS_CLIP = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


class Identity:
    name = "identity"

    def forward(self, x):
        return np.asarray(x, dtype=float)

    def inverse(self, y):
        return np.asarray(y, dtype=float)

    def grad(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def log_grad(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def dlog_grad(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def __repr__(self) -> str:
        return "Identity()"

    def __eq__(self, other) -> bool:
        return isinstance(other, Identity)

    def __hash__(self) -> int:
        return hash(self.name)


@dataclass(frozen=True)
class Softplus:
    """``max(log(1 + e^x), clip)``.

    The derivative is reported as ``sigmoid(x)`` everywhere, including the
    clipped region (x < ~-13.8), where the true derivative is zero.  The
    clipped region is only a numerical floor and is never a sensible place
    for a particle to be, so keeping the smooth Jacobian avoids ``log(0)``
    in the prior density.
    """

    clip: float = SOFTPLUS_CLIP
    name = "softplus"

    def forward(self, x):
        return np.maximum(np.logaddexp(0.0, x), self.clip)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= self.clip) or not np.all(np.isfinite(y)):
            raise DomainError(f"softplus inverse requires values > {self.clip}, got {y}")
        # log(e^y - 1) written to stay accurate for both small and large y
        return y + np.log(-np.expm1(-y))

    def grad(self, x):
        return expit(x)

    def log_grad(self, x):
        return -np.logaddexp(0.0, -np.asarray(x, dtype=float))

    def dlog_grad(self, x):
        return expit(-np.asarray(x, dtype=float))


IDENTITY = Identity()
SOFTPLUS = Softplus()


def transform_forward(t, unconstrained):
    return t.forward(unconstrained)


def transform_inverse(t, constrained):
    return t.inverse(constrained)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gamma:
    """Gamma distribution in shape/scale form (mean = shape * scale)."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ConfigError(f"Gamma prior needs shape > 0 and scale > 0, got {self}")

    @property
    def positive_only(self) -> bool:
        return True

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        k, s = self.shape, self.scale
        return (k - 1.0) * math.log(x) - x / s - k * math.log(s) - gammaln(k)

    def dlogpdf(self, x: float) -> float:
        if x <= 0:
            return 0.0
        return (self.shape - 1.0) / x - 1.0 / self.scale

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.gamma(self.shape, self.scale))

    def to_dict(self) -> dict:
        return {"kind": "gamma", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ConfigError(f"Gaussian prior needs sd > 0, got {self}")

    @property
    def positive_only(self) -> bool:
        return False

    def logpdf(self, x: float) -> float:
        z = (x - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * _LOG_2PI

    def dlogpdf(self, x: float) -> float:
        return -(x - self.mean) / self.sd**2

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.normal(self.mean, self.sd))

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": self.mean, "sd": self.sd}


def prior_from_dict(d: Mapping) -> Gamma | Gaussian:
    kind = d.get("kind")
    if kind == "gamma":
        return Gamma(float(d["shape"]), float(d["scale"]))
    if kind == "gaussian":
        return Gaussian(float(d.get("mean", 0.0)), float(d.get("sd", 1.0)))
    raise ConfigError(f"unknown prior kind {kind!r}")


def log_prior(p, value: float) -> float:
    return p.logpdf(float(value))


@dataclass(frozen=True)
class ParamInfo:
    """Name, role and transform of one scalar hyperparameter.

    ``kind`` is one of ``variance``, ``lengthscale``, ``offset``, ``slope``,
    ``intercept``, ``noise``; default priors are assigned by kind.
    """

    name: str
    kind: str
    transform: Identity | Softplus = field(default=SOFTPLUS)


# Default prior per parameter kind.  The polynomial offset is kept positive
# (a negative offset breaks positive semi-definiteness for odd degrees) and
# gets the variance prior.
DEFAULT_PRIORS: dict[str, Gamma | Gaussian] = {
    "lengthscale": Gamma(1.0, 1.0),
    "variance": Gamma(2.0, 2.0),
    "offset": Gamma(2.0, 2.0),
    "noise": Gamma(2.0, 2.0),
    "slope": Gaussian(0.0, 1.0),
    "intercept": Gaussian(0.0, 1.0),
}


def bind_priors(
    params: Sequence[ParamInfo],
    by_kind: Mapping[str, Gamma | Gaussian] | None = None,
    overrides: Mapping[str, Gamma | Gaussian] | None = None,
) -> dict[str, Gamma | Gaussian]:
    """Assign one prior to every parameter name.

    ``overrides`` (keyed by exact parameter name) win over ``by_kind``, which
    in turn wins over :data:`DEFAULT_PRIORS`.
    """
    kinds = dict(DEFAULT_PRIORS)
    kinds.update(by_kind or {})
    overrides = dict(overrides or {})
    unknown = set(overrides) - {p.name for p in params}
    if unknown:
        raise ConfigError(f"prior overrides for unknown parameters: {sorted(unknown)}")
    out = {}
    for p in params:
        prior = overrides.get(p.name, kinds.get(p.kind))
        if prior is None:
            raise ConfigError(f"no prior for parameter {p.name!r} of kind {p.kind!r}")
        if prior.positive_only and not isinstance(p.transform, Softplus):
            raise ConfigError(f"Gamma prior on unconstrained parameter {p.name!r}")
        out[p.name] = prior
    return out


def log_prior_total(
    unconstrained: np.ndarray,
    params: Sequence[ParamInfo],
    priors: Mapping[str, Gamma | Gaussian],
) -> tuple[float, np.ndarray]:
    """Log prior density over unconstrained coordinates and its gradient.

    For a parameter ``y = T(x)``: ``log p(T(x)) + log T'(x)``.
    """
    x = np.asarray(unconstrained, dtype=float)
    if x.shape != (len(params),):
        raise ShapeError(f"expected {len(params)} values, got shape {x.shape}")
    total = 0.0
    grad = np.zeros_like(x)
    for i, p in enumerate(params):
        try:
            prior = priors[p.name]
        except KeyError:
            raise ConfigError(f"no prior bound to parameter {p.name!r}") from None
        t = p.transform
        y = float(t.forward(x[i]))
        dy = float(t.grad(x[i]))
        total += prior.logpdf(y) + float(t.log_grad(x[i]))
        grad[i] = prior.dlogpdf(y) * dy + float(t.dlog_grad(x[i]))
    return total, grad


def sample_prior(
    params: Sequence[ParamInfo], priors: Mapping[str, Gamma | Gaussian], rng: np.random.Generator
) -> np.ndarray:
    """Draw constrained values from the priors and map them to unconstrained space."""
    out = np.empty(len(params))
    for i, p in enumerate(params):
        y = priors[p.name].sample(rng)
        if isinstance(p.transform, Softplus):
            y = max(y, 10 * p.transform.clip)
        out[i] = float(p.transform.inverse(y))
    return out


# ---------------------------------------------------------------------------
# Mean functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearMean:
    """``m(x) = a.T x + b`` over all input columns."""

    a: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", float(self.b))

    @classmethod
    def zeros(cls, input_dim: int) -> "LinearMean":
        return cls(np.zeros(input_dim), 0.0)

    @property
    def input_dim(self) -> int:
        return self.a.size

    @property
    def n_params(self) -> int:
        return self.a.size + 1

    def param_info(self) -> list[ParamInfo]:
        infos = [ParamInfo(f"mean.a[{i}]", "slope", IDENTITY) for i in range(self.a.size)]
        infos.append(ParamInfo("mean.b", "intercept", IDENTITY))
        return infos

    def get_unconstrained(self) -> np.ndarray:
        return np.append(self.a, self.b)

    def with_unconstrained(self, theta) -> "LinearMean":
        theta = np.asarray(theta, dtype=float)
        return LinearMean(theta[:-1].copy(), float(theta[-1]))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.a.size:
            raise ShapeError(f"mean expects (n, {self.a.size}) inputs, got {X.shape}")
        return X @ self.a + self.b

    def grad(self, X: np.ndarray, dout: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product: gradient of ``dout . m(X)`` w.r.t. (a, b)."""
        return np.append(X.T @ dout, np.sum(dout))


@dataclass(frozen=True)
class ZeroMean:
    input_dim: int

    n_params = 0

    def param_info(self) -> list[ParamInfo]:
        return []

    def get_unconstrained(self) -> np.ndarray:
        return np.zeros(0)

    def with_unconstrained(self, theta) -> "ZeroMean":
        return self

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"mean expects (n, {self.input_dim}) inputs, got {X.shape}")
        return np.zeros(X.shape[0])

    def grad(self, X: np.ndarray, dout: np.ndarray) -> np.ndarray:
        return np.zeros(0)


def mean_eval(m, X) -> np.ndarray:
    return m(X)
