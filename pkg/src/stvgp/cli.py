"""Command-line interface.

Subcommands
-----------
synth           write a synthetic training set, held-out set and grid inputs
init-inducing   run k-DPP selection only and write the chosen rows
fit             select inducing inputs, run SVGD, save the ensemble
predict         grid surface or single-site time series from a saved ensemble
compare         integrated means, percent changes and a difference map for two fits

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .analysis import (
    SpaceTimeGrid,
    WEIGHTINGS,
    difference_surface,
    integrated_mean,
    location_series,
    percent_change,
    predict_grid,
    select_times,
)
from .artifact import FittedEnsemble, config_hash
from .config import RunConfig
from .data import DEFAULT_COVARIATES, TIME_COLUMN, ingest, write_inducing_csv
from .errors import ConfigError, DataError, StvgpError
from .pipeline import fit_dataset, select_inducing

log = logging.getLogger("stvgp")

REPORT_FORMAT = "stvgp-compare-report"
REPORT_VERSION = 1

INPUT_HELP = """\
input CSV columns: lon, lat, timestamp (ISO-8601), one column per covariate
(default: wind_speed, wind_direction, relative_humidity, temperature) and the
response (default: no2).  Rows with missing values are dropped and counted."""

GRID_HELP = """\
grid spec (JSON):
  {"lon": [min, max, n], "lat": [min, max, n],
   "start": ISO time, "end": ISO time (inclusive), "step_hours": h,
   "mask": CSV of 0/1 with n_lat rows and n_lon columns, or nested list (optional),
   "covariates": {"constant": {name: value}} | {"file": CSV} | "training_means"}
a covariate CSV has columns lon, lat, timestamp and one per covariate, with a
row for every grid cell and time.

grid output CSV columns: lon, lat, time, mean, sd (data units), one row per
unmasked cell and time, time-major."""

SERIES_HELP = """\
series output CSV columns: time, mean, sd, lower, upper where
lower/upper = mean -/+ z * sd."""

COMPARE_HELP = """\
compare spec (JSON):
  {"artifact_a": path, "artifact_b": path,
   "grid": {"lon", "lat", "step_hours", "mask", "covariates"} as for predict,
   "period_a": {"start", "end", "covariates"?}, "period_b": {...},
   "windows": {name: [h0, h1]}   hours after each period start, inclusive,
   "contrasts": [{"name", "before": "a:<window>", "after": "b:<window>"}],
   "difference_window": [h0, h1],  "weighting": "uniform" | "coslat"}
without "contrasts", every window is compared a -> b.
writes report.json (integrated means, percent changes) and difference.csv
(lon, lat, diff = b - a, time-averaged over the difference window)."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    return {
        "stvgp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def write_manifest(out_dir: Path, command: str, cfg: dict, seed: int, outputs: dict, extra=None) -> Path:
    """Record what is needed to reproduce a run."""
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "versions": versions(),
        "outputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in outputs.items()},
    }
    if extra:
        manifest.update(extra)
    return _write_json(out_dir / "manifest.json", manifest)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "data", None):
        cfg.data.path = args.data
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out_dir", None):
        cfg.output.dir = args.out_dir
    if not cfg.data.path:
        raise ConfigError("no training data: set data.path in the config or pass --data")
    return cfg


def _axis(spec, name) -> np.ndarray:
    try:
        lo, hi, n = spec[name]
        return np.linspace(float(lo), float(hi), int(n))
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"grid {name!r} must be [min, max, n]") from None


def _mask(value, base: Path):
    if value is None:
        return None
    if isinstance(value, str):
        path = base / value
        try:
            return np.loadtxt(path, delimiter=",", ndmin=2) > 0
        except OSError as exc:
            raise DataError(f"cannot read mask {path}: {exc}") from None
        except ValueError as exc:
            raise DataError(f"{path}: mask must be a 0/1 matrix ({exc})") from None
    return np.asarray(value, dtype=bool)


def _covariate_source(value, fitted: FittedEnsemble, base: Path):
    names = list(fitted.covariates)
    if value is None or value == "training_means":
        n = len(names)
        means = fitted.stats.mean[3 : 3 + n]
        return dict(zip(names, means.tolist()))
    if isinstance(value, dict) and "constant" in value:
        return dict(value["constant"])
    if isinstance(value, dict) and "file" in value:
        path = base / value["file"]
        try:
            return pd.read_csv(path, dtype={TIME_COLUMN: str})
        except OSError as exc:
            raise DataError(f"cannot read grid covariates {path}: {exc}") from None
    raise ConfigError(f"unrecognised covariate source {value!r}")


def grid_from_spec(spec: dict, fitted: FittedEnsemble, base: Path, start=None, end=None, covariates=None) -> SpaceTimeGrid:
    try:
        start = spec["start"] if start is None else start
        end = spec["end"] if end is None else end
        step = float(spec["step_hours"])
    except KeyError as exc:
        raise ConfigError(f"grid spec lacks {exc}") from None
    lon, lat = _axis(spec, "lon"), _axis(spec, "lat")
    src = _covariate_source(spec.get("covariates") if covariates is None else covariates, fitted, base)
    return SpaceTimeGrid.regular(
        (lon[0], lon[-1]), lon.size, (lat[0], lat[-1]), lat.size, start, end, step,
        mask=_mask(spec.get("mask"), base), covariates=src,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import SyntheticDesign, grid_points, make_study, to_frame

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    design = SyntheticDesign(
        n_stations=args.n_stations, n_times=args.n_times, n_covariates=args.n_covariates
    )
    study = make_study(design, seed=args.seed, n_heldout=args.n_heldout)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(2,)))
    paths = {
        "data": out / "data.csv",
        "heldout": out / "heldout.csv",
        "grid_covariates": out / "grid_covariates.csv",
        "grid": out / "grid.json",
    }
    study.frame("train", rng, args.scale).to_csv(paths["data"], index=False, float_format="%.10g")
    study.frame("heldout", rng, args.scale).to_csv(paths["heldout"], index=False, float_format="%.10g")
    g = study.extras
    to_frame(grid_points(design, g["grid_lon"], g["grid_lat"], g["grid_hours"]), None, design).to_csv(
        paths["grid_covariates"], index=False, float_format="%.10g"
    )
    t = pd.Timestamp(design.start) + pd.to_timedelta(g["grid_hours"], unit="h")
    grid = {
        "lon": [g["grid_lon"][0], g["grid_lon"][-1], len(g["grid_lon"])],
        "lat": [g["grid_lat"][0], g["grid_lat"][-1], len(g["grid_lat"])],
        "start": t[0].isoformat(),
        "end": t[-1].isoformat(),
        "step_hours": float(g["grid_hours"][1] - g["grid_hours"][0]) if len(t) > 1 else 1.0,
        "covariates": {"file": paths["grid_covariates"].name},
    }
    _write_json(paths["grid"], grid)
    cfg = {"seed": args.seed, "scale": args.scale, "design": vars(design)}
    write_manifest(out, "synth", cfg, args.seed, paths)
    log.info("wrote synthetic study to %s", out)
    return 0


def cmd_init_inducing(args) -> int:
    cfg = _load_config(args)
    ds = ingest(cfg.data.path, cfg.data.covariates, cfg.data.target)
    Z, rows = select_inducing(ds, cfg)
    out = Path(args.out) if args.out else Path(cfg.output.dir) / "inducing.csv"
    write_inducing_csv(out, Z, ds.stats, ds.time_origin, ds.covariates, rows)
    log.info("wrote %d inducing inputs to %s", len(rows), out)
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = ingest(cfg.data.path, cfg.data.covariates, cfg.data.target)
    log.info("ingested %d rows (%d dropped) from %s", ds.n, ds.n_dropped, cfg.data.path)
    outcome = fit_dataset(ds, cfg)
    artifact = outcome.fitted.save(out / cfg.output.artifact)
    trace = out / cfg.output.trace
    pd.DataFrame([vars(r) for r in outcome.result.trace]).to_csv(trace, index=False, float_format="%.10g")
    inducing = out / "inducing.csv"
    write_inducing_csv(
        inducing, outcome.fitted.model.Z, ds.stats, ds.time_origin, ds.covariates, outcome.fitted.inducing_rows
    )
    cfg_dict = cfg.to_dict()
    write_manifest(
        out,
        "fit",
        cfg_dict,
        cfg.seed,
        {"artifact": artifact, "trace": trace, "inducing": inducing},
        {"data_sha256": _sha256(Path(cfg.data.path)), "n_rows": ds.n, "n_dropped": ds.n_dropped, "seconds": outcome.seconds},
    )
    log.info("fit finished in %.1fs; artifact %s", outcome.seconds, artifact)
    return 0


def cmd_predict(args) -> int:
    fitted = FittedEnsemble.load(args.artifact)
    out = Path(args.out)
    if args.location:
        try:
            lon, lat = (float(v) for v in args.location.split(","))
        except ValueError:
            raise ConfigError("--location must be 'lon,lat'") from None
        if not (args.start and args.end):
            raise ConfigError("--location needs --start and --end")
        times = pd.date_range(args.start, args.end, freq=pd.Timedelta(hours=args.step_hours))
        if args.covariates:
            df = pd.read_csv(args.covariates, dtype={TIME_COLUMN: str})
            missing = [c for c in fitted.covariates if c not in df.columns]
            if missing or len(df) != len(times):
                raise DataError(
                    f"{args.covariates}: need columns {list(fitted.covariates)} and {len(times)} rows"
                )
            cov = df[list(fitted.covariates)].to_numpy(float)
        else:
            cov = _covariate_source(None, fitted, Path("."))
        frame = location_series(fitted, lon, lat, times, cov, z=args.z, include_noise=args.observed)
    else:
        if not args.grid:
            raise ConfigError("predict needs --grid or --location")
        spec = _read_json(args.grid)
        grid = grid_from_spec(spec, fitted, Path(args.grid).parent)
        frame = predict_grid(fitted, grid, include_noise=args.observed).to_frame()
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.10g")
    log.info("wrote %d rows to %s", len(frame), out)
    return 0


def _hours(pair, what) -> tuple[float, float]:
    try:
        a, b = pair
        return float(a), float(b)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be [h0, h1] hours") from None


def run_compare(spec: dict, base: Path, out_dir: Path) -> dict:
    """Evaluate a compare spec; writes difference.csv and report.json."""
    for key in ("artifact_a", "artifact_b", "grid", "period_a", "period_b", "windows"):
        if key not in spec:
            raise ConfigError(f"compare spec lacks {key!r}")
    weighting = spec.get("weighting", "uniform")
    if weighting not in WEIGHTINGS:
        raise ConfigError(f"weighting must be one of {WEIGHTINGS}")
    windows = {name: _hours(w, f"window {name!r}") for name, w in spec["windows"].items()}
    if not windows:
        raise ConfigError("compare spec has no windows")
    preds, periods = {}, {}
    for tag in ("a", "b"):
        apath = base / spec[f"artifact_{tag}"]
        fitted = FittedEnsemble.load(apath)
        period = spec[f"period_{tag}"]
        grid = grid_from_spec(
            spec["grid"], fitted, base, period.get("start"), period.get("end"), period.get("covariates")
        )
        gp = predict_grid(fitted, grid)
        preds[tag] = gp
        means = {}
        for name, w in windows.items():
            im = integrated_mean(gp, w, weighting)
            sel = grid.times[select_times(grid.times, w)]
            means[name] = {**im.to_dict(), "start": sel[0].isoformat(), "end": sel[-1].isoformat()}
        periods[tag] = {
            "artifact": str(spec[f"artifact_{tag}"]),
            "start": grid.times[0].isoformat(),
            "end": grid.times[-1].isoformat(),
            "integrated_means": means,
        }
    if not preds["a"].grid.same_geometry(preds["b"].grid):
        raise ConfigError("the two periods do not share grid geometry")

    contrasts = spec.get("contrasts") or [
        {"name": f"{w}: a -> b", "before": f"a:{w}", "after": f"b:{w}"} for w in windows
    ]
    rows = []
    for c in contrasts:
        vals = []
        for ref in (c["before"], c["after"]):
            tag, _, w = ref.partition(":")
            if tag not in periods or w not in windows:
                raise ConfigError(f"bad contrast reference {ref!r}; use 'a:<window>' or 'b:<window>'")
            vals.append(periods[tag]["integrated_means"][w]["value"])
        rows.append(
            {
                "name": c.get("name", f"{c['before']} -> {c['after']}"),
                "before": c["before"],
                "after": c["after"],
                "before_value": vals[0],
                "after_value": vals[1],
                "percent_change": percent_change(*vals),
            }
        )

    dw = _hours(spec.get("difference_window", next(iter(windows.values()))), "difference_window")
    diff = difference_surface(preds["a"], preds["b"], dw)
    out_dir.mkdir(parents=True, exist_ok=True)
    diff_path = out_dir / "difference.csv"
    diff.to_csv(diff_path, index=False, float_format="%.10g")
    g = preds["a"].grid
    report = {
        "format": REPORT_FORMAT,
        "format_version": REPORT_VERSION,
        "weighting": weighting,
        "grid": {"n_lon": int(g.lon.size), "n_lat": int(g.lat.size), "n_cells": g.n_cells},
        "windows": {k: list(v) for k, v in windows.items()},
        "periods": periods,
        "contrasts": rows,
        "difference": {
            "window": list(dw),
            "csv": diff_path.name,
            "n_cells": int(len(diff)),
            "mean_diff": float(diff["diff"].mean()),
        },
    }
    _write_json(out_dir / "report.json", report)
    return report


def cmd_compare(args) -> int:
    spec = _read_json(args.spec)
    out = Path(args.out_dir)
    report = run_compare(spec, Path(args.spec).parent, out)
    write_manifest(out, "compare", spec, 0, {"report": out / "report.json", "difference": out / "difference.csv"})
    for c in report["contrasts"]:
        print(f"{c['name']}: {c['before_value']:.4g} -> {c['after_value']:.4g} ({c['percent_change']:+.2f}%)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="stvgp", description=__doc__, formatter_class=fmt)
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic study", formatter_class=fmt, epilog=INPUT_HELP)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=float, default=1.0, help="multiplier on the noise-free surface")
    s.add_argument("--n-stations", type=int, default=50)
    s.add_argument("--n-times", type=int, default=100)
    s.add_argument("--n-heldout", type=int, default=500)
    s.add_argument("--n-covariates", type=int, default=len(DEFAULT_COVARIATES))
    s.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("init-inducing", cmd_init_inducing, "select inducing inputs and write them as CSV"),
        ("fit", cmd_fit, "fit an ensemble and save it"),
    ):
        f = sub.add_parser(name, help=helptext, formatter_class=fmt, epilog=INPUT_HELP)
        f.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        f.add_argument("--data", help="training CSV (overrides data.path)")
        f.add_argument("--seed", type=int, help="overrides the config seed")
        f.add_argument("--out-dir", help="overrides output.dir")
        if name == "init-inducing":
            f.add_argument("--out", help="output CSV (default <out-dir>/inducing.csv)")
        f.set_defaults(func=func)

    pr = sub.add_parser(
        "predict", help="predict a grid surface or site series", formatter_class=fmt,
        epilog=GRID_HELP + "\n\n" + SERIES_HELP,
    )
    pr.add_argument("--artifact", required=True)
    pr.add_argument("--out", required=True, help="output CSV")
    pr.add_argument("--grid", help="grid spec JSON")
    pr.add_argument("--location", help="'lon,lat' for a time series")
    pr.add_argument("--start")
    pr.add_argument("--end")
    pr.add_argument("--step-hours", type=float, default=1.0)
    pr.add_argument("--covariates", help="CSV with one row per series time (default: training means)")
    pr.add_argument("--z", type=float, default=1.96, help="envelope multiplier")
    pr.add_argument("--observed", action="store_true", help="add observation noise to the variance")
    pr.set_defaults(func=cmd_predict)

    c = sub.add_parser("compare", help="compare two fitted periods", formatter_class=fmt, epilog=COMPARE_HELP)
    c.add_argument("--spec", required=True)
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except StvgpError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
