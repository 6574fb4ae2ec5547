"""CSV ingestion and standardization.

Input files carry one observation per row with columns ``lon, lat,
timestamp`` (ISO-8601), the covariate columns and the response.  Time is
encoded as fractional hours since the earliest timestamp in the file, then
every column (including the response) is standardized with the *population*
standard deviation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError, ShapeError

log = logging.getLogger(__name__)

DEFAULT_COVARIATES = ("wind_speed", "wind_direction", "relative_humidity", "temperature")
DEFAULT_TARGET = "no2"
TIME_COLUMN = "timestamp"


def parse_timestamps(values, lines=None) -> pd.DatetimeIndex:
    """Parse ISO-8601 strings; report the file line of the first failure.

    Offsets are converted to UTC and dropped; strings without an offset are
    taken as UTC.  ``lines`` gives the file line of each value (default:
    header on line 1).
    """
    values = np.asarray(values, dtype=object)
    parsed = pd.to_datetime(pd.Series(values, dtype=object), format="ISO8601", errors="coerce", utc=True)
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        line = int(lines[i]) if lines is not None else i + 2
        raise DataError(f"line {line}: unparseable timestamp {values[i]!r}")
    return pd.DatetimeIndex(parsed).tz_localize(None)


def hours_since(times, origin) -> np.ndarray:
    delta = pd.DatetimeIndex(times) - pd.Timestamp(origin)
    return delta.total_seconds().to_numpy() / 3600.0


def hours_to_timestamps(hours, origin) -> pd.DatetimeIndex:
    return pd.Timestamp(origin) + pd.to_timedelta(np.asarray(hours, dtype=float), unit="h")


@dataclass
class Standardizer:
    """Per-column affine map to zero mean and unit population sd.

    ``columns`` lists design columns followed by the response.
    """

    columns: list[str]
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, columns: Sequence[str], table: np.ndarray) -> "Standardizer":
        table = np.asarray(table, dtype=float)
        mean = table.mean(axis=0)
        sd = table.std(axis=0)  # population sd (ddof=0)
        for name, s in zip(columns, sd):
            if not s > 0:
                raise DataError(f"degenerate column {name!r}: zero standard deviation")
        return cls(list(columns), mean, sd)

    @property
    def n_inputs(self) -> int:
        return len(self.columns) - 1

    def transform_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ShapeError(f"expected {self.n_inputs} design columns, got shape {X.shape}")
        return (X - self.mean[:-1]) / self.sd[:-1]

    def inverse_X(self, Xs) -> np.ndarray:
        return np.asarray(Xs, dtype=float) * self.sd[:-1] + self.mean[:-1]

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.mean[-1]) / self.sd[-1]

    def inverse_y(self, ys) -> np.ndarray:
        return np.asarray(ys, dtype=float) * self.sd[-1] + self.mean[-1]

    def inverse_var(self, var) -> np.ndarray:
        return np.asarray(var, dtype=float) * self.sd[-1] ** 2

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(list(d["columns"]), np.asarray(d["mean"], dtype=float), np.asarray(d["sd"], dtype=float))


@dataclass
class Dataset:
    X: np.ndarray  # standardized design (n, 3 + n_covariates)
    y: np.ndarray  # standardized response
    raw_X: np.ndarray  # lon, lat, hours since time_origin, covariates
    raw_y: np.ndarray
    stats: Standardizer
    time_origin: pd.Timestamp
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    n_dropped: int = 0
    source: str | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_covariates(self) -> int:
        return len(self.covariates)


def read_table(
    path,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    target: str | None = DEFAULT_TARGET,
) -> tuple[pd.DataFrame, pd.DatetimeIndex, int]:
    """Read and validate a CSV.  Returns (rows kept, their timestamps, rows dropped)."""
    required = ["lon", "lat", TIME_COLUMN, *covariates] + ([target] if target else [])
    try:
        df = pd.read_csv(path, dtype={TIME_COLUMN: str})
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from None
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(
            f"{path}: missing required columns {missing}; expected columns {required}"
        )
    df = df[required]
    numeric = [c for c in required if c != TIME_COLUMN]
    for c in numeric:
        converted = pd.to_numeric(df[c], errors="coerce")
        bad = converted.isna() & df[c].notna()
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"line {i + 2}: non-numeric value {df[c].iloc[i]!r} in column {c!r}")
        df[c] = converted
    df[numeric] = df[numeric].where(np.isfinite(df[numeric]))
    lines = np.arange(len(df)) + 2
    keep = df.notna().all(axis=1).to_numpy()
    n_dropped = int((~keep).sum())
    if n_dropped:
        log.warning("%s: dropped %d rows with missing values", path, n_dropped)
    df = df.loc[keep].reset_index(drop=True)
    times = parse_timestamps(df[TIME_COLUMN].to_numpy(), lines=lines[keep])
    return df, times, n_dropped


def ingest(
    path,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    target: str = DEFAULT_TARGET,
) -> Dataset:
    """Load a training CSV and standardize every column."""
    covariates = tuple(covariates)
    df, times, n_dropped = read_table(path, covariates, target)
    if len(df) == 0:
        raise DataError(f"{path}: no complete rows")
    origin = times.min()
    raw_X = np.column_stack(
        [df["lon"].to_numpy(float), df["lat"].to_numpy(float), hours_since(times, origin)]
        + [df[c].to_numpy(float) for c in covariates]
    )
    raw_y = df[target].to_numpy(float)
    columns = ["lon", "lat", "time_hours", *covariates, target]
    stats = Standardizer.fit(columns, np.column_stack([raw_X, raw_y]))
    return Dataset(
        X=stats.transform_X(raw_X),
        y=stats.transform_y(raw_y),
        raw_X=raw_X,
        raw_y=raw_y,
        stats=stats,
        time_origin=origin,
        covariates=covariates,
        n_dropped=n_dropped,
        source=str(path),
    )


def design_from_frame(df: pd.DataFrame, covariates: Sequence[str], time_origin) -> np.ndarray:
    """Raw design matrix (lon, lat, hours since origin, covariates) of a frame."""
    times = parse_timestamps(df[TIME_COLUMN].to_numpy())
    return np.column_stack(
        [df["lon"].to_numpy(float), df["lat"].to_numpy(float), hours_since(times, time_origin)]
        + [df[c].to_numpy(float) for c in covariates]
    )


def write_inducing_csv(path, Z_std: np.ndarray, stats: Standardizer, time_origin, covariates, rows=None):
    """Audit file of inducing inputs in original units."""
    raw = stats.inverse_X(Z_std)
    out = pd.DataFrame(
        {
            "lon": raw[:, 0],
            "lat": raw[:, 1],
            TIME_COLUMN: hours_to_timestamps(raw[:, 2], time_origin).strftime("%Y-%m-%dT%H:%M:%S"),
        }
    )
    for i, c in enumerate(covariates):
        out[c] = raw[:, 3 + i]
    if rows is not None:
        out.insert(0, "row", np.asarray(rows, dtype=int))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(path, index=False, float_format="%.10g")
