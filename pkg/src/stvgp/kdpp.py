"""k-DPP selection of inducing inputs by MCMC swaps.

The chain state is a k-subset ``S`` of the candidate rows.  Each step proposes
swapping a uniformly chosen member ``i`` of ``S`` for a uniformly chosen
non-member ``j`` and accepts with probability
``min(1, det(L_S') / det(L_S))``.  The proposal is symmetric, so the chain
targets ``P(S) ∝ det(L_S)``.

Determinant ratios come from a maintained inverse ``C = L_S^{-1}``:
removing position ``p`` leaves ``det(L_S) / det(L_{S-p}) = 1 / C_pp`` and adding
``j`` multiplies by the Schur complement ``L_jj - b^T L_{S-p}^{-1} b``, so a
proposal costs O(k^2) and an accepted swap a rank-two update of ``C``.
The full matrix ``L`` is never formed; rows are evaluated on demand.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from .errors import ConfigError, NumericalError, ShapeError
from .kernels import Kernel, SquaredExponential

log = logging.getLogger(__name__)

RowFn = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class KDPPConfig:
    k: int = 1000
    mcmc_steps: int = 10000
    similarity_kernel: Kernel | None = None  # None: unit SE, median lengthscale
    pool_size: int | None = 20000
    lengthscale_pairs: int = 2000
    jitter: float = 1e-6
    refresh_every: int = 200  # accepted swaps between full re-inversions
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.mcmc_steps < 0:
            raise ConfigError("mcmc_steps must be >= 0")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "mcmc_steps": self.mcmc_steps,
            "pool_size": self.pool_size,
            "lengthscale_pairs": self.lengthscale_pairs,
            "jitter": self.jitter,
            "refresh_every": self.refresh_every,
            "seed": self.seed,
        }


def _inverse_pd(A: np.ndarray) -> np.ndarray:
    try:
        c = cholesky(A, lower=True)
    except LinAlgError:
        raise NumericalError("k-DPP kernel submatrix is not positive definite") from None
    return cho_solve((c, True), np.eye(A.shape[0]))


class SwapChain:
    """Metropolis swap chain over k-subsets of ``range(n)``."""

    def __init__(
        self,
        n: int,
        k: int,
        row_fn: RowFn,
        diag: np.ndarray,
        rng: np.random.Generator,
        refresh_every: int = 200,
        init: np.ndarray | None = None,
    ):
        if not 1 <= k <= n:
            raise ConfigError(f"k={k} must lie in [1, {n}]")
        self.n, self.k = n, k
        self.row_fn = row_fn
        self.diag = np.asarray(diag, dtype=float)
        self.rng = rng
        self.refresh_every = refresh_every
        self.S = rng.choice(n, size=k, replace=False) if init is None else np.array(init)
        self.member = np.zeros(n, dtype=bool)
        self.member[self.S] = True
        self.n_accepted = 0
        self._since_refresh = 0
        self._refresh()

    def submatrix(self, idx: np.ndarray) -> np.ndarray:
        return np.stack([self.row_fn(int(i), idx) for i in idx])

    def _refresh(self):
        self.C = _inverse_pd(self.submatrix(self.S))
        self._since_refresh = 0

    def _downdated(self, p: int):
        c = self.C[:, p]
        # inverse of L_{S-p}, embedded with a zero row/column at p
        return self.C - np.outer(c, c) / c[p]

    def swap_ratio(self, p: int, j: int) -> float:
        """``det(L_{S with S[p] -> j}) / det(L_S)``."""
        b = self.row_fn(j, self.S)
        b[p] = 0.0
        c = self.C[:, p]
        cp = c[p]
        q = self.C @ b - c * (c @ b) / cp
        schur = self.diag[j] - float(b @ q)
        return schur * cp

    def _accept(self, p: int, j: int):
        Cm = self._downdated(p)
        b = self.row_fn(j, self.S)
        b[p] = 0.0
        e = Cm @ b
        s = self.diag[j] - float(b @ e)
        C = Cm + np.outer(e, e) / s
        C[p, :] = -e / s
        C[:, p] = -e / s
        C[p, p] = 1.0 / s
        self.C = C
        self.member[self.S[p]] = False
        self.member[j] = True
        self.S[p] = j
        self.n_accepted += 1
        self._since_refresh += 1
        if self._since_refresh >= self.refresh_every:
            self._refresh()

    def step(self) -> bool:
        if self.k == self.n:
            return False
        p = int(self.rng.integers(self.k))
        while True:
            j = int(self.rng.integers(self.n))
            if not self.member[j]:
                break
        ratio = self.swap_ratio(p, j)
        u = self.rng.random()
        # non-positive ratios come from a numerically singular proposal
        if ratio > 0 and u < min(1.0, ratio):
            self._accept(p, j)
            return True
        return False

    def run(self, n_steps: int) -> np.ndarray:
        for _ in range(n_steps):
            self.step()
        return np.sort(self.S)

    def states(self, n_steps: int) -> Iterator[tuple[int, ...]]:
        """Yield the (sorted) state after every step."""
        for _ in range(n_steps):
            self.step()
            yield tuple(sorted(int(i) for i in self.S))


def matrix_chain(L: np.ndarray, k: int, rng: np.random.Generator, **kw) -> SwapChain:
    """Chain on an explicit L-ensemble matrix."""
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ShapeError(f"L must be square, got {L.shape}")
    return SwapChain(L.shape[0], k, lambda j, idx: L[j, idx].copy(), np.diag(L).copy(), rng, **kw)


def kdpp_sample_matrix(L: np.ndarray, k: int, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    if k > L.shape[0]:
        raise ConfigError(f"k={k} exceeds {L.shape[0]} candidates")
    return matrix_chain(L, k, rng).run(n_steps)


def median_lengthscale(X: np.ndarray, n_pairs: int, rng: np.random.Generator) -> float:
    """Median Euclidean distance over random distinct pairs of rows."""
    n = X.shape[0]
    if n < 2:
        return 1.0
    i = rng.integers(n, size=n_pairs)
    j = rng.integers(n - 1, size=n_pairs)
    j = j + (j >= i)
    d = np.sqrt(np.sum((X[i] - X[j]) ** 2, axis=1))
    med = float(np.median(d))
    return med if med > 0 else 1.0


def kdpp_sample(candidates: np.ndarray, config: KDPPConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Indices (sorted) of a k-subset of ``candidates`` drawn by the swap chain.

    ``L = gram(similarity_kernel, candidates) + jitter * I``, evaluated row by
    row.  ``candidates`` must not contain duplicate rows.
    """
    X = np.asarray(candidates, dtype=float)
    n = X.shape[0]
    if config.k > n:
        raise ConfigError(f"k={config.k} exceeds the {n} candidates")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if config.k == n:
        return np.arange(n)
    kern = config.similarity_kernel
    if kern is None:
        ell = median_lengthscale(X, config.lengthscale_pairs, rng)
        kern = SquaredExponential(tuple(range(X.shape[1])), "similarity", lengthscales=[ell])
        log.info("k-DPP similarity lengthscale %.4g", ell)
    diag = kern.K_diag(X) + config.jitter

    def row(j, idx):
        r = kern.K(X[j : j + 1], X[idx])[0]
        r[idx == j] += config.jitter
        return r

    chain = SwapChain(n, config.k, row, diag, rng, config.refresh_every)
    S = chain.run(config.mcmc_steps)
    log.info(
        "k-DPP chain: %d steps, %d accepted swaps", config.mcmc_steps, chain.n_accepted
    )
    return S


def unique_rows(X: np.ndarray) -> np.ndarray:
    """Indices of the first occurrence of each distinct row, in input order."""
    _, first = np.unique(np.ascontiguousarray(X), axis=0, return_index=True)
    return np.sort(first)


def init_inducing(X: np.ndarray, config: KDPPConfig) -> tuple[np.ndarray, np.ndarray]:
    """Pick inducing inputs among the rows of ``X``.

    Returns ``(Z, rows)`` with ``Z = X[rows]``.  Duplicate rows are removed
    first, then (if larger than ``pool_size``) a uniform subsample is taken.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(config.seed)
    distinct = unique_rows(X)
    if distinct.size < config.k:
        raise ConfigError(f"only {distinct.size} distinct rows for k={config.k} inducing points")
    pool = distinct
    if config.pool_size is not None and pool.size > max(config.pool_size, config.k):
        pool = np.sort(rng.choice(pool, size=max(config.pool_size, config.k), replace=False))
    sel = kdpp_sample(X[pool], config, rng)
    rows = pool[sel]
    return X[rows].copy(), rows
