"""Synthetic spatiotemporal datasets drawn from a known GP.

Stations sit at random locations in a lon/lat box and report at regular
time steps.  Covariates are deterministic smooth fields of (lon, lat, time),
so they can be reproduced at any prediction location.  The latent surface is
one joint draw from a product kernel of the same shape as the model kernel
(Matern 5/2 in space, cubic polynomial x Matern 1/2 in time, squared
exponential over covariates), on coordinates rescaled to roughly [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import DEFAULT_COVARIATES, DEFAULT_TARGET, TIME_COLUMN, hours_to_timestamps
from .kernels import Matern12, Matern52, Polynomial, Product, SquaredExponential

TAU = 2.0 * np.pi


def covariate_fields(lon, lat, hours, n_covariates: int) -> np.ndarray:
    """Smooth weather-like covariates; column order follows DEFAULT_COVARIATES."""
    lon, lat, hours = (np.asarray(a, dtype=float) for a in (lon, lat, hours))
    days = hours / 24.0
    cols = [
        5.0 + 2.0 * np.cos(TAU * days / 5.0 + 0.3 * lon) + 0.3 * (lat - 53.0),  # wind_speed
        180.0 + 90.0 * np.sin(TAU * days / 7.0 + lat),  # wind_direction
        75.0 + 10.0 * np.sin(TAU * days / 3.0 + 1.0) - 2.0 * (lat - 53.0),  # relative_humidity
        8.0 + 3.0 * np.sin(TAU * days / 11.0 + lon / 3.0) + 0.5 * (lat - 53.0),  # temperature
    ]
    if n_covariates > len(cols):
        raise ValueError(f"at most {len(cols)} synthetic covariates")
    return np.column_stack(cols[:n_covariates]) if n_covariates else np.empty((lon.size, 0))


@dataclass
class SyntheticDesign:
    lon_range: tuple[float, float] = (-5.0, 1.0)
    lat_range: tuple[float, float] = (50.0, 56.0)
    n_stations: int = 50
    n_times: int = 100
    step_hours: float = 21.0
    n_covariates: int = 4
    start: str = "2020-02-01T00:00:00"
    # generating kernel, on rescaled coordinates
    spatial_lengthscale: float = 5.0
    temporal_lengthscale: float = 20.0
    covariate_lengthscale: float = 8.0
    poly_variance: float = 0.3
    poly_offset: float = 1.0
    # response = baseline + trend * t + amplitude * f + noise
    baseline: float = 30.0
    trend: float = -3.0
    amplitude: float = 8.0
    noise_sd: float = 2.5

    @property
    def duration(self) -> float:
        return (self.n_times - 1) * self.step_hours

    def _centres_halfwidths(self):
        cov_ref = covariate_fields(
            np.linspace(*self.lon_range, 7).repeat(7 * 9),
            np.tile(np.linspace(*self.lat_range, 7).repeat(9), 7),
            np.tile(np.linspace(0, self.duration, 9), 49),
            self.n_covariates,
        )
        lo = np.concatenate([[self.lon_range[0], self.lat_range[0], 0.0], cov_ref.min(axis=0)])
        hi = np.concatenate([[self.lon_range[1], self.lat_range[1], self.duration], cov_ref.max(axis=0)])
        return 0.5 * (lo + hi), 0.5 * (hi - lo)

    def rescale(self, raw: np.ndarray) -> np.ndarray:
        c, h = self._centres_halfwidths()
        return (raw - c) / h

    def kernel(self):
        cov = tuple(range(3, 3 + self.n_covariates))
        factors = [
            Matern52((0, 1), lengthscales=[self.spatial_lengthscale] * 2),
            Polynomial((2,), degree=3, variance=self.poly_variance, offset=self.poly_offset),
            Matern12((2,), lengthscales=[self.temporal_lengthscale]),
        ]
        if cov:
            factors.append(SquaredExponential(cov, lengthscales=[self.covariate_lengthscale] * len(cov)))
        return Product(factors)

    def raw_design(self, lon, lat, hours) -> np.ndarray:
        return np.column_stack([lon, lat, hours, covariate_fields(lon, lat, hours, self.n_covariates)])

    def surface(self, raw: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Noise-free response given latent draws ``f`` at ``raw`` rows."""
        tn = self.rescale(raw)[:, 2]
        return self.baseline + self.trend * tn + self.amplitude * f


@dataclass
class SyntheticStudy:
    design: SyntheticDesign
    train: np.ndarray  # raw design rows
    heldout: np.ndarray
    grid: np.ndarray
    f_train: np.ndarray
    f_heldout: np.ndarray
    f_grid: np.ndarray
    grid_shape: tuple[int, int, int] = (0, 0, 0)  # (n_times, n_lat, n_lon)
    extras: dict = field(default_factory=dict)

    def frame(self, which: str, rng: np.random.Generator, scale: float = 1.0) -> pd.DataFrame:
        """Observations for ``train`` or ``heldout`` with fresh noise.

        ``scale`` multiplies the noise-free surface (regime change).
        """
        raw = getattr(self, which)
        f = getattr(self, f"f_{which}")
        y = scale * self.design.surface(raw, f) + self.design.noise_sd * rng.standard_normal(len(f))
        return to_frame(raw, y, self.design)

    def grid_truth(self, scale: float = 1.0) -> np.ndarray:
        return scale * self.design.surface(self.grid, self.f_grid)


def to_frame(raw: np.ndarray, y, design: SyntheticDesign) -> pd.DataFrame:
    df = pd.DataFrame(
        {
            "lon": raw[:, 0],
            "lat": raw[:, 1],
            TIME_COLUMN: hours_to_timestamps(raw[:, 2], design.start).strftime("%Y-%m-%dT%H:%M:%S"),
        }
    )
    for i, name in enumerate(DEFAULT_COVARIATES[: design.n_covariates]):
        df[name] = raw[:, 3 + i]
    if y is not None:
        df[DEFAULT_TARGET] = y
    return df


def grid_points(design: SyntheticDesign, lon, lat, hours) -> np.ndarray:
    """Raw design rows for a (time, lat, lon) grid, lon varying fastest."""
    T, LA, LO = np.meshgrid(hours, lat, lon, indexing="ij")
    return design.raw_design(LO.ravel(), LA.ravel(), T.ravel())


def make_study(
    design: SyntheticDesign | None = None,
    seed: int = 0,
    n_heldout: int = 500,
    grid_lon=None,
    grid_lat=None,
    grid_hours=None,
) -> SyntheticStudy:
    """Sample station inputs, held-out inputs and grid inputs, then one joint
    latent draw over all of them."""
    design = design or SyntheticDesign()
    rng = np.random.default_rng(seed)
    hours = np.arange(design.n_times) * design.step_hours

    def stations(n):
        return rng.uniform(*design.lon_range, n), rng.uniform(*design.lat_range, n)

    slon, slat = stations(design.n_stations)
    train = design.raw_design(
        np.repeat(slon, design.n_times), np.repeat(slat, design.n_times), np.tile(hours, design.n_stations)
    )
    hlon, hlat = stations(n_heldout)
    heldout = design.raw_design(hlon, hlat, rng.uniform(0.0, design.duration, n_heldout))

    pad = 0.1
    lo0, lo1 = design.lon_range
    la0, la1 = design.lat_range
    grid_lon = np.linspace(lo0 + pad * (lo1 - lo0), lo1 - pad * (lo1 - lo0), 6) if grid_lon is None else np.asarray(grid_lon)
    grid_lat = np.linspace(la0 + pad * (la1 - la0), la1 - pad * (la1 - la0), 6) if grid_lat is None else np.asarray(grid_lat)
    grid_hours = np.linspace(0.0, design.duration, 8) if grid_hours is None else np.asarray(grid_hours)
    grid = grid_points(design, grid_lon, grid_lat, grid_hours)

    allpts = np.vstack([train, heldout, grid])
    K = design.kernel().K(design.rescale(allpts))
    K[np.diag_indices_from(K)] += 1e-8
    f = np.linalg.cholesky(K) @ rng.standard_normal(K.shape[0])
    n1, n2 = len(train), len(train) + len(heldout)
    return SyntheticStudy(
        design,
        train,
        heldout,
        grid,
        f[:n1],
        f[n1:n2],
        f[n2:],
        (grid_hours.size, grid_lat.size, grid_lon.size),
        {"grid_lon": grid_lon, "grid_lat": grid_lat, "grid_hours": grid_hours},
    )
