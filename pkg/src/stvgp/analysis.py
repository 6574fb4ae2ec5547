"""Grid predictions and the summaries built on them.

A :class:`SpaceTimeGrid` is a regular lon/lat lattice of cell centres, a
list of timestamps and a boolean mask of cells to include.  Predicting on it
gives a :class:`GridPrediction` in data units, from which integrated means,
percentage changes and per-cell difference maps are computed.  Integrated
means weight every unmasked cell and time equally unless ``coslat``
weighting is requested.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
import pandas as pd

from .data import TIME_COLUMN, parse_timestamps
from .errors import DataError, DomainError, ShapeError

WEIGHTINGS = ("uniform", "coslat")

Window = Union[tuple, None]


@dataclass
class SpaceTimeGrid:
    """Regular prediction lattice.

    ``mask`` has shape (n_lat, n_lon); ``True`` marks cells to predict.
    ``covariates`` is either a mapping from covariate name to a constant
    (scalar or (n_lat, n_lon) array) or a table with columns ``lon, lat,
    timestamp`` plus one column per covariate.
    """

    lon: np.ndarray
    lat: np.ndarray
    times: pd.DatetimeIndex
    mask: np.ndarray | None = None
    covariates: Mapping[str, object] | pd.DataFrame | None = None

    def __post_init__(self):
        self.lon = np.asarray(self.lon, dtype=float).reshape(-1)
        self.lat = np.asarray(self.lat, dtype=float).reshape(-1)
        self.times = pd.DatetimeIndex(self.times)
        if self.lon.size == 0 or self.lat.size == 0 or len(self.times) == 0:
            raise DomainError("grid needs at least one longitude, latitude and time")
        if self.mask is None:
            self.mask = np.ones(self.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.shape:
            raise ShapeError(f"mask has shape {self.mask.shape}, grid is {self.shape} (lat, lon)")

    @classmethod
    def regular(
        cls,
        lon_range: tuple[float, float],
        n_lon: int,
        lat_range: tuple[float, float],
        n_lat: int,
        start,
        end,
        step_hours: float,
        mask=None,
        covariates=None,
    ) -> "SpaceTimeGrid":
        """Lattice with ``n_lon x n_lat`` cell centres spanning the given ranges
        (inclusive) and times from ``start`` to ``end`` inclusive."""
        if step_hours <= 0:
            raise DomainError("step_hours must be positive")
        start, end = pd.Timestamp(start), pd.Timestamp(end)
        if end < start:
            raise DomainError(f"grid end {end} precedes start {start}")
        n_steps = int(np.floor((end - start) / pd.Timedelta(hours=step_hours) + 1e-9))
        times = start + pd.to_timedelta(np.arange(n_steps + 1) * step_hours, unit="h")
        return cls(np.linspace(*lon_range, n_lon), np.linspace(*lat_range, n_lat), times, mask, covariates)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lat.size, self.lon.size

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    def same_geometry(self, other: "SpaceTimeGrid") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.lon, other.lon)
            and np.array_equal(self.lat, other.lat)
            and np.array_equal(self.mask, other.mask)
        )

    def cell_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """lon and lat of unmasked cells, row-major over (lat, lon)."""
        LA, LO = np.meshgrid(self.lat, self.lon, indexing="ij")
        return LO[self.mask], LA[self.mask]

    def covariate_cube(self, names: Sequence[str]) -> np.ndarray:
        """Covariates at every time and unmasked cell, shape (n_times, n_cells, c)."""
        nt, nc = len(self.times), self.n_cells
        if not names:
            return np.empty((nt, nc, 0))
        src = self.covariates
        if src is None:
            raise DataError(f"grid has no covariate source for {list(names)}")
        if isinstance(src, pd.DataFrame):
            return self._cube_from_table(src, names)
        cube = np.empty((nt, nc, len(names)))
        for i, name in enumerate(names):
            if name not in src:
                raise DataError(f"no value for covariate {name!r} on the grid")
            val = np.asarray(src[name], dtype=float)
            if val.ndim == 0:
                cube[:, :, i] = float(val)
            elif val.shape == self.shape:
                cube[:, :, i] = val[self.mask][None, :]
            else:
                raise ShapeError(f"covariate {name!r} has shape {val.shape}, grid is {self.shape}")
        if not np.all(np.isfinite(cube)):
            raise DataError("non-finite covariate value on the grid")
        return cube

    def _cube_from_table(self, df: pd.DataFrame, names: Sequence[str]) -> np.ndarray:
        missing = [c for c in ("lon", "lat", TIME_COLUMN, *names) if c not in df.columns]
        if missing:
            raise DataError(f"grid covariate table lacks columns {missing}")
        ilon = _snap(df["lon"].to_numpy(float), self.lon)
        ilat = _snap(df["lat"].to_numpy(float), self.lat)
        times = parse_timestamps(df[TIME_COLUMN].to_numpy())
        itime = self.times.get_indexer(times)
        ok = (ilon >= 0) & (ilat >= 0) & (itime >= 0)
        full = np.full((len(self.times), *self.shape, len(names)), np.nan)
        vals = df.loc[ok, list(names)].to_numpy(float)
        full[itime[ok], ilat[ok], ilon[ok]] = vals
        cube = full[:, self.mask]
        bad = np.argwhere(~np.isfinite(cube))
        if bad.size:
            t, cell, c = bad[0]
            lon, lat = (a[cell] for a in self.cell_coords())
            raise DataError(
                f"missing covariate {names[c]!r} at cell lon={lon:.6g}, lat={lat:.6g}, "
                f"time {self.times[t].isoformat()}"
            )
        return cube


def _snap(values: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Index of the grid coordinate each value sits on, or -1."""
    if axis.size == 1:
        tol = 1e-9 * max(1.0, abs(axis[0]))
        return np.where(np.abs(values - axis[0]) <= tol, 0, -1)
    step = (axis[-1] - axis[0]) / (axis.size - 1)
    idx = np.rint((values - axis[0]) / step).astype(int)
    inside = (idx >= 0) & (idx < axis.size)
    idx = np.where(inside, idx, 0)
    close = np.abs(axis[idx] - values) <= 1e-6 * abs(step)
    return np.where(inside & close, idx, -1)


@dataclass
class GridPrediction:
    """Predictions in data units; masked cells hold NaN.

    Arrays are indexed (time, lat, lon); per-particle arrays carry a leading
    particle axis.
    """

    grid: SpaceTimeGrid
    particle_means: np.ndarray  # (J, nt, nlat, nlon)
    particle_vars: np.ndarray
    mean: np.ndarray  # (nt, nlat, nlon)
    var: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.var)

    @property
    def n_particles(self) -> int:
        return self.particle_means.shape[0]

    def to_frame(self) -> pd.DataFrame:
        """Rows for unmasked cells, time-major: lon, lat, time, mean, sd."""
        g = self.grid
        lon, lat = g.cell_coords()
        nt = len(g.times)
        return pd.DataFrame(
            {
                "lon": np.tile(lon, nt),
                "lat": np.tile(lat, nt),
                "time": np.repeat(g.times.strftime("%Y-%m-%dT%H:%M:%S"), lon.size),
                "mean": self.mean[:, g.mask].ravel(),
                "sd": self.sd[:, g.mask].ravel(),
            }
        )


def predict_grid(fitted, grid: SpaceTimeGrid, include_noise: bool = False) -> GridPrediction:
    """Ensemble prediction at every unmasked cell and time, in data units."""
    cube = grid.covariate_cube(fitted.covariates)
    lon, lat = grid.cell_coords()
    J, nt = fitted.n_particles, len(grid.times)
    pm = np.full((J, nt, *grid.shape), np.nan)
    pv = np.full_like(pm, np.nan)
    mean = np.full((nt, *grid.shape), np.nan)
    var = np.full_like(mean, np.nan)
    for t, when in enumerate(grid.times):
        Xs = fitted.standardized_design(lon, lat, [when] * lon.size, cube[t])
        mu, sd, means, varis = fitted.predict_original(Xs, include_noise)
        mean[t][grid.mask] = mu
        var[t][grid.mask] = sd**2
        pm[:, t][:, grid.mask] = means
        pv[:, t][:, grid.mask] = varis
    return GridPrediction(grid, pm, pv, mean, var)


def select_times(times: pd.DatetimeIndex, window: Window) -> np.ndarray:
    """Boolean selector of ``times`` inside an inclusive window.

    ``window`` is ``None`` (all times) or a ``(start, end)`` pair whose ends
    are timestamps or numbers of hours after ``times[0]``.
    """
    times = pd.DatetimeIndex(times)
    if window is None:
        return np.ones(len(times), dtype=bool)
    try:
        start, end = window
    except (TypeError, ValueError):
        raise DomainError(f"window must be a (start, end) pair, got {window!r}") from None

    def resolve(x):
        if isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool):
            return times[0] + pd.Timedelta(hours=float(x))
        return pd.Timestamp(x)

    start, end = resolve(start), resolve(end)
    sel = np.asarray((times >= start) & (times <= end))
    if not sel.any():
        raise DomainError(f"time window [{start}, {end}] contains no grid times")
    return sel


def cell_weights(grid: SpaceTimeGrid, weighting: str = "uniform") -> np.ndarray:
    """Quadrature weights over unmasked cells (sum to one)."""
    if weighting not in WEIGHTINGS:
        raise DomainError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    if grid.n_cells == 0:
        raise DomainError("mask excludes every cell")
    _, lat = grid.cell_coords()
    w = np.ones(lat.size) if weighting == "uniform" else np.cos(np.deg2rad(lat))
    return w / w.sum()


@dataclass
class IntegratedMean:
    value: float
    n_cells: int
    n_times: int
    per_particle: np.ndarray
    weighting: str = "uniform"

    @property
    def particle_sd(self) -> float:
        return float(np.std(self.per_particle))

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "n_cells": int(self.n_cells),
            "n_times": int(self.n_times),
            "per_particle": [float(v) for v in self.per_particle],
            "particle_sd": self.particle_sd,
            "weighting": self.weighting,
        }


def _quadrature(surface: np.ndarray, mask: np.ndarray, sel: np.ndarray, w: np.ndarray) -> float:
    vals = surface[sel][:, mask]  # (n_times, n_cells)
    return float(np.sum(vals.mean(axis=0) * w))


def integrated_mean(gp: GridPrediction, window: Window = None, weighting: str = "uniform") -> IntegratedMean:
    """Average of the predictive mean over unmasked cells and window times."""
    g = gp.grid
    w = cell_weights(g, weighting)
    sel = select_times(g.times, window)
    per = np.array([_quadrature(m, g.mask, sel, w) for m in gp.particle_means])
    value = _quadrature(gp.mean, g.mask, sel, w)
    return IntegratedMean(value, g.n_cells, int(sel.sum()), per, weighting)


def percent_change(before, after) -> float:
    """``100 (after - before) / |before|``; accepts IntegratedMean or numbers."""
    b = before.value if isinstance(before, IntegratedMean) else float(before)
    a = after.value if isinstance(after, IntegratedMean) else float(after)
    if b == 0:
        raise DomainError("percent change is undefined for a zero baseline")
    return 100.0 * (a - b) / abs(b)


def difference_surface(a: GridPrediction, b: GridPrediction, window_a: Window = None, window_b: Window = None) -> pd.DataFrame:
    """Per-cell time-averaged mean of ``b`` minus that of ``a``.

    ``window_b`` defaults to ``window_a``; numeric window ends are hours
    after each grid's own first time, so periods in different years line up.
    """
    if not a.grid.same_geometry(b.grid):
        raise DomainError("grids differ in lon/lat lattice or mask")
    window_b = window_a if window_b is None else window_b
    sa = select_times(a.grid.times, window_a)
    sb = select_times(b.grid.times, window_b)
    mask = a.grid.mask
    diff = b.mean[sb][:, mask].mean(axis=0) - a.mean[sa][:, mask].mean(axis=0)
    lon, lat = a.grid.cell_coords()
    return pd.DataFrame({"lon": lon, "lat": lat, "diff": diff})


def location_series(
    fitted,
    lon: float,
    lat: float,
    times,
    covariates,
    z: float = 1.96,
    include_noise: bool = False,
) -> pd.DataFrame:
    """Predictive mean and ``mean +- z sd`` envelope at one site over time.

    ``covariates`` is an (n_times, c) array or a mapping of name to a scalar
    or per-time sequence.
    """
    times = pd.DatetimeIndex(times)
    n = len(times)
    if isinstance(covariates, Mapping):
        missing = [c for c in fitted.covariates if c not in covariates]
        if missing:
            raise DataError(f"no values for covariates {missing}")
        cov = np.column_stack(
            [np.broadcast_to(np.asarray(covariates[c], dtype=float), (n,)) for c in fitted.covariates]
        ) if fitted.covariates else np.empty((n, 0))
    else:
        cov = np.asarray(covariates, dtype=float).reshape(n, len(fitted.covariates))
    if not np.all(np.isfinite(cov)):
        raise DataError("non-finite covariate value in location series")
    Xs = fitted.standardized_design(np.full(n, lon), np.full(n, lat), times, cov)
    mu, sd, _, _ = fitted.predict_original(Xs, include_noise)
    return pd.DataFrame(
        {
            "time": times.strftime("%Y-%m-%dT%H:%M:%S"),
            "mean": mu,
            "sd": sd,
            "lower": mu - z * sd,
            "upper": mu + z * sd,
        }
    )


def heldout_metrics(y, mean, sd, baseline: float, z: float = 1.96) -> dict:
    """RMSE, RMSE of a constant ``baseline`` and central-interval coverage."""
    y, mean, sd = (np.asarray(a, dtype=float) for a in (y, mean, sd))
    rmse = float(np.sqrt(np.mean((mean - y) ** 2)))
    base = float(np.sqrt(np.mean((baseline - y) ** 2)))
    return {
        "rmse": rmse,
        "baseline_rmse": base,
        "rmse_ratio": rmse / base,
        "coverage": float(np.mean(np.abs(y - mean) <= z * sd)),
    }
