"""Covariance functions with dimension slicing and hyperparameter gradients.

Kernels are immutable.  Learning happens on a flat vector of unconstrained
hyperparameters: ``get_unconstrained`` / ``with_unconstrained`` convert
between a kernel and that vector, and ``grad_params`` returns one
``dK/dtheta`` matrix per entry of the vector.

Stationary kernels use the scaled Euclidean distance
``r = sqrt(sum_d ((x_d - x'_d) / l_d)^2)``:

=================  ==========================================
Matern 1/2         ``s2 * exp(-r)``
Matern 5/2         ``s2 * (1 + sqrt5 r + 5/3 r^2) exp(-sqrt5 r)``
squared exp.       ``s2 * exp(-r^2 / 2)``
polynomial         ``(s2 * x.x' + gamma) ** degree``
white              ``s2 if x == x' (bitwise on the slice) else 0``
=================  ==========================================

``s2`` is the variance parameter itself (it is the learned value, not its
square root).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DomainError, ShapeError
from .priors import SOFTPLUS, ParamInfo

__all__ = [
    "Kernel",
    "Matern12",
    "Matern52",
    "SquaredExponential",
    "Polynomial",
    "White",
    "Product",
    "Sum",
    "gram",
    "grad_params",
    "default_kernel",
    "preset_kernel",
    "KERNEL_PRESETS",
]

_SQRT5 = math.sqrt(5.0)


def _check_inputs(X, X2, dims: Sequence[int]):
    X = np.asarray(X, dtype=float)
    X2 = X if X2 is None else np.asarray(X2, dtype=float)
    if X.ndim != 2 or X2.ndim != 2:
        raise ShapeError(f"kernel inputs must be 2-D, got {X.shape} and {X2.shape}")
    if X.shape[1] != X2.shape[1]:
        raise ShapeError(f"column mismatch: {X.shape[1]} vs {X2.shape[1]}")
    if dims and max(dims) >= X.shape[1]:
        raise ShapeError(f"active dims {tuple(dims)} out of range for {X.shape[1]} columns")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(X2))):
        raise DomainError("non-finite kernel input")
    return X, X2


class Kernel:
    """Base class.  Subclasses implement ``K``, ``K_diag``, ``param_info``,
    ``get_unconstrained``, ``with_unconstrained`` and ``grad_params``."""

    active_dims: tuple[int, ...] = ()

    @property
    def n_params(self) -> int:
        return len(self.param_info())

    def __call__(self, x, x2) -> float:
        """Evaluate on two single points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        x2 = np.atleast_2d(np.asarray(x2, dtype=float))
        return float(self.K(x, x2)[0, 0])

    def __mul__(self, other: "Kernel") -> "Product":
        return Product([self, other])

    def __add__(self, other: "Kernel") -> "Sum":
        return Sum([self, other])

    def get_constrained(self) -> np.ndarray:
        theta = self.get_unconstrained()
        return np.array([float(p.transform.forward(t)) for p, t in zip(self.param_info(), theta)])

    def params_dict(self) -> dict[str, float]:
        return {p.name: float(v) for p, v in zip(self.param_info(), self.get_constrained())}

    def leaves(self) -> list["Kernel"]:
        return [self]


@dataclass(frozen=True, eq=False)
class _Leaf(Kernel):
    active_dims: tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        dims = tuple(int(d) for d in self.active_dims)
        if len(set(dims)) != len(dims) or any(d < 0 for d in dims):
            raise ShapeError(f"active dims must be unique and non-negative, got {dims}")
        object.__setattr__(self, "active_dims", dims)

    def _slice(self, X):
        return X[:, list(self.active_dims)]

    def _pname(self, p: str) -> str:
        return f"{self.name}.{p}" if self.name else p


@dataclass(frozen=True, eq=False)
class Stationary(_Leaf):
    """Shared machinery for Matern / squared exponential kernels.

    ``lengthscales`` of length 1 is isotropic; otherwise it must match the
    number of active dims (ARD).
    """

    variance: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        super().__post_init__()
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if ls.size not in (1, len(self.active_dims)):
            raise ShapeError(
                f"{ls.size} lengthscales for {len(self.active_dims)} active dims"
            )
        if np.any(ls <= 0) or self.variance <= 0:
            raise DomainError("variance and lengthscales must be positive")
        ls.flags.writeable = False
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def ard(self) -> bool:
        return self.lengthscales.size > 1

    def param_info(self) -> list[ParamInfo]:
        infos = [ParamInfo(self._pname("variance"), "variance", SOFTPLUS)]
        if self.ard:
            infos += [
                ParamInfo(self._pname(f"lengthscales[{i}]"), "lengthscale", SOFTPLUS)
                for i in range(self.lengthscales.size)
            ]
        else:
            infos.append(ParamInfo(self._pname("lengthscale"), "lengthscale", SOFTPLUS))
        return infos

    def get_unconstrained(self) -> np.ndarray:
        return SOFTPLUS.inverse(np.append(self.variance, self.lengthscales))

    def get_constrained(self) -> np.ndarray:
        return np.append(self.variance, self.lengthscales)

    def with_unconstrained(self, theta) -> "Stationary":
        c = SOFTPLUS.forward(np.asarray(theta, dtype=float))
        return replace(self, variance=float(c[0]), lengthscales=c[1:].copy())

    # -- profile functions of the squared scaled distance ------------------
    def _k(self, r2):
        raise NotImplementedError

    def _dk_dr2(self, r2):
        raise NotImplementedError

    def _r2(self, X, X2):
        A = self._slice(X) / self.lengthscales
        B = self._slice(X2) / self.lengthscales
        return cdist(A, B, "sqeuclidean")

    def K(self, X, X2=None) -> np.ndarray:
        X, X2 = _check_inputs(X, X2, self.active_dims)
        return self.variance * self._k(self._r2(X, X2))

    def K_diag(self, X) -> np.ndarray:
        X, _ = _check_inputs(X, None, self.active_dims)
        return np.full(X.shape[0], self.variance)

    def grad_params(self, X, X2=None, unconstrained: bool = True) -> list[np.ndarray]:
        X, X2 = _check_inputs(X, X2, self.active_dims)
        r2 = self._r2(X, X2)
        base = self._k(r2)
        dk_dr2 = self.variance * self._dk_dr2(r2)
        grads = [base]
        A, B = self._slice(X), self._slice(X2)
        if self.ard:
            for d, ell in enumerate(self.lengthscales):
                s_d = np.subtract.outer(A[:, d], B[:, d]) ** 2 / ell**2
                grads.append(dk_dr2 * (-2.0 * s_d / ell))
        else:
            ell = self.lengthscales[0]
            grads.append(dk_dr2 * (-2.0 * r2 / ell))
        if unconstrained:
            chain = SOFTPLUS.grad(self.get_unconstrained())
            grads = [g * c for g, c in zip(grads, chain)]
        return grads


@dataclass(frozen=True, eq=False)
class SquaredExponential(Stationary):
    def _k(self, r2):
        return np.exp(-0.5 * r2)

    def _dk_dr2(self, r2):
        return -0.5 * np.exp(-0.5 * r2)


@dataclass(frozen=True, eq=False)
class Matern12(Stationary):
    def _k(self, r2):
        return np.exp(-np.sqrt(r2))

    def _dk_dr2(self, r2):
        r = np.sqrt(r2)
        # singular at r = 0, but every caller multiplies by a per-dim squared
        # distance that is zero there
        out = np.zeros_like(r)
        np.divide(-np.exp(-r), 2.0 * r, out=out, where=r > 0)
        return out


@dataclass(frozen=True, eq=False)
class Matern52(Stationary):
    def _k(self, r2):
        r = np.sqrt(r2)
        return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)

    def _dk_dr2(self, r2):
        r = np.sqrt(r2)
        return -(5.0 / 6.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)


@dataclass(frozen=True, eq=False)
class Polynomial(_Leaf):
    """``(variance * <x, x'> + offset) ** degree``; the degree is fixed."""

    degree: int = 3
    variance: float = 1.0
    offset: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if int(self.degree) != self.degree or self.degree < 1:
            raise DomainError(f"polynomial degree must be a positive integer, got {self.degree}")
        if self.variance <= 0 or self.offset <= 0:
            raise DomainError("polynomial variance and offset must be positive")
        object.__setattr__(self, "degree", int(self.degree))

    def param_info(self) -> list[ParamInfo]:
        return [
            ParamInfo(self._pname("variance"), "variance", SOFTPLUS),
            ParamInfo(self._pname("offset"), "offset", SOFTPLUS),
        ]

    def get_unconstrained(self) -> np.ndarray:
        return SOFTPLUS.inverse(np.array([self.variance, self.offset]))

    def get_constrained(self) -> np.ndarray:
        return np.array([self.variance, self.offset])

    def with_unconstrained(self, theta) -> "Polynomial":
        c = SOFTPLUS.forward(np.asarray(theta, dtype=float))
        return replace(self, variance=float(c[0]), offset=float(c[1]))

    def _inner(self, X, X2):
        return self._slice(X) @ self._slice(X2).T

    def K(self, X, X2=None) -> np.ndarray:
        X, X2 = _check_inputs(X, X2, self.active_dims)
        return (self.variance * self._inner(X, X2) + self.offset) ** self.degree

    def K_diag(self, X) -> np.ndarray:
        X, _ = _check_inputs(X, None, self.active_dims)
        xs = self._slice(X)
        return (self.variance * np.sum(xs * xs, axis=1) + self.offset) ** self.degree

    def grad_params(self, X, X2=None, unconstrained: bool = True) -> list[np.ndarray]:
        X, X2 = _check_inputs(X, X2, self.active_dims)
        dot = self._inner(X, X2)
        base = self.degree * (self.variance * dot + self.offset) ** (self.degree - 1)
        grads = [base * dot, base]
        if unconstrained:
            chain = SOFTPLUS.grad(self.get_unconstrained())
            grads = [g * c for g, c in zip(grads, chain)]
        return grads


def _row_equal(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Boolean matrix of bytewise row equality."""
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    if A.shape[1] == 0:
        return np.ones((A.shape[0], B.shape[0]), dtype=bool)
    row = np.dtype((np.void, A.dtype.itemsize * A.shape[1]))
    return A.view(row).ravel()[:, None] == B.view(row).ravel()[None, :]


@dataclass(frozen=True, eq=False)
class White(_Leaf):
    variance: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.variance <= 0:
            raise DomainError("white variance must be positive")
        object.__setattr__(self, "variance", float(self.variance))

    def param_info(self) -> list[ParamInfo]:
        return [ParamInfo(self._pname("variance"), "variance", SOFTPLUS)]

    def get_unconstrained(self) -> np.ndarray:
        return SOFTPLUS.inverse(np.array([self.variance]))

    def get_constrained(self) -> np.ndarray:
        return np.array([self.variance])

    def with_unconstrained(self, theta) -> "White":
        return replace(self, variance=float(SOFTPLUS.forward(np.asarray(theta, dtype=float))[0]))

    def K(self, X, X2=None) -> np.ndarray:
        X, X2 = _check_inputs(X, X2, self.active_dims)
        return self.variance * _row_equal(self._slice(X), self._slice(X2))

    def K_diag(self, X) -> np.ndarray:
        X, _ = _check_inputs(X, None, self.active_dims)
        return np.full(X.shape[0], self.variance)

    def grad_params(self, X, X2=None, unconstrained: bool = True) -> list[np.ndarray]:
        X, X2 = _check_inputs(X, X2, self.active_dims)
        g = _row_equal(self._slice(X), self._slice(X2)).astype(float)
        if unconstrained:
            g *= float(SOFTPLUS.grad(self.get_unconstrained())[0])
        return [g]


class _Combination(Kernel):
    def __init__(self, kernels: Sequence[Kernel]):
        flat: list[Kernel] = []
        for k in kernels:
            # flatten nested nodes of the same type
            flat.extend(k.kernels if type(k) is type(self) else [k])
        if not flat:
            raise ShapeError("combination kernel needs at least one factor")
        self.kernels: tuple[Kernel, ...] = tuple(flat)
        self.active_dims = tuple(sorted({d for k in flat for d in k.active_dims}))
        self._sizes = [k.n_params for k in flat]

    def param_info(self) -> list[ParamInfo]:
        return [p for k in self.kernels for p in k.param_info()]

    def get_unconstrained(self) -> np.ndarray:
        return np.concatenate([k.get_unconstrained() for k in self.kernels])

    def get_constrained(self) -> np.ndarray:
        return np.concatenate([k.get_constrained() for k in self.kernels])

    def with_unconstrained(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != sum(self._sizes):
            raise ShapeError(f"expected {sum(self._sizes)} parameters, got {theta.size}")
        parts, i = [], 0
        for k, n in zip(self.kernels, self._sizes):
            parts.append(k.with_unconstrained(theta[i : i + n]))
            i += n
        return type(self)(parts)

    def leaves(self) -> list[Kernel]:
        return [leaf for k in self.kernels for leaf in k.leaves()]

    def __repr__(self) -> str:
        return f"{type(self).__name__}({list(self.kernels)!r})"


class Product(_Combination):
    def K(self, X, X2=None) -> np.ndarray:
        out = self.kernels[0].K(X, X2)
        for k in self.kernels[1:]:
            out = out * k.K(X, X2)
        return out

    def K_diag(self, X) -> np.ndarray:
        out = self.kernels[0].K_diag(X)
        for k in self.kernels[1:]:
            out = out * k.K_diag(X)
        return out

    def grad_params(self, X, X2=None, unconstrained: bool = True) -> list[np.ndarray]:
        grams = [k.K(X, X2) for k in self.kernels]
        grads = []
        for i, k in enumerate(self.kernels):
            rest = None
            for j, g in enumerate(grams):
                if j != i:
                    rest = g if rest is None else rest * g
            for dk in k.grad_params(X, X2, unconstrained):
                grads.append(dk if rest is None else dk * rest)
        return grads


class Sum(_Combination):
    def K(self, X, X2=None) -> np.ndarray:
        out = self.kernels[0].K(X, X2)
        for k in self.kernels[1:]:
            out = out + k.K(X, X2)
        return out

    def K_diag(self, X) -> np.ndarray:
        out = self.kernels[0].K_diag(X)
        for k in self.kernels[1:]:
            out = out + k.K_diag(X)
        return out

    def grad_params(self, X, X2=None, unconstrained: bool = True) -> list[np.ndarray]:
        return [g for k in self.kernels for g in k.grad_params(X, X2, unconstrained)]


def gram(k: Kernel, X, X2=None) -> np.ndarray:
    return k.K(X, X2)


def grad_params(k: Kernel, X, X2=None, unconstrained: bool = True) -> list[np.ndarray]:
    return k.grad_params(X, X2, unconstrained)


# ---------------------------------------------------------------------------
# Model kernels
# ---------------------------------------------------------------------------

SPATIAL_DIMS = (0, 1)
TEMPORAL_DIMS = (2,)


def _covariate_dims(n_covariates: int) -> tuple[int, ...]:
    return tuple(range(3, 3 + n_covariates))


def default_kernel(n_covariates: int = 4, ard: bool = True, poly_degree: int = 3) -> Kernel:
    """Spatiotemporal product kernel plus white noise on every column.

    Columns are ``lon, lat, time, covariates...``.  With four covariates this
    has 13 hyperparameters: Matern 5/2 on space (1 + 2), polynomial on time
    (2), Matern 1/2 on time (1 + 1), squared exponential on the covariates
    (1 + 4) and white noise (1).
    """
    cov = _covariate_dims(n_covariates)
    n_cols = 3 + n_covariates

    def ls(n):
        return np.ones(n if ard else 1)

    spatial = Matern52(SPATIAL_DIMS, "spatial", lengthscales=ls(2))
    poly = Polynomial(TEMPORAL_DIMS, "temporal_poly", degree=poly_degree)
    temporal = Matern12(TEMPORAL_DIMS, "temporal", lengthscales=ls(1))
    factors: list[Kernel] = [spatial, poly, temporal]
    if cov:
        factors.append(SquaredExponential(cov, "covariate", lengthscales=ls(len(cov))))
    return Product(factors) + White(tuple(range(n_cols)), "white")


def _matern52_iso(n_covariates: int) -> Kernel:
    n = 3 + n_covariates
    return Matern52(tuple(range(n)), "matern") + White(tuple(range(n)), "white")


def _matern52_ard(n_covariates: int) -> Kernel:
    n = 3 + n_covariates
    return Matern52(tuple(range(n)), "matern", lengthscales=np.ones(n)) + White(
        tuple(range(n)), "white"
    )


def _poly_matern52(n_covariates: int) -> Kernel:
    n = 3 + n_covariates
    rest = (0, 1) + _covariate_dims(n_covariates)
    return Polynomial(TEMPORAL_DIMS, "temporal_poly", degree=3) * Matern52(
        rest, "matern", lengthscales=np.ones(len(rest))
    ) + White(tuple(range(n)), "white")


KERNEL_PRESETS = {
    "default": default_kernel,
    "matern52_iso": _matern52_iso,
    "matern52_ard": _matern52_ard,
    "poly_matern52": _poly_matern52,
}


def preset_kernel(name: str, n_covariates: int = 4) -> Kernel:
    """Kernels used for model comparison, in order of increasing complexity:
    isotropic Matern 5/2, ARD Matern 5/2, polynomial(time) x ARD Matern 5/2
    on the remaining columns, and the full ``default`` kernel."""
    from .errors import ConfigError

    try:
        return KERNEL_PRESETS[name](n_covariates)
    except KeyError:
        raise ConfigError(f"unknown kernel preset {name!r}; choose from {sorted(KERNEL_PRESETS)}") from None
