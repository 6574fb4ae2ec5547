"""Persistence of fitted ensembles.

An artifact is a zip container holding ``metadata.json`` (format version,
config snapshot, model spec, standardization stats, time origin) and ``.npy``
arrays (inducing inputs, particles, inducing row indices).  Entry timestamps
are pinned so identical fits produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import Standardizer, hours_since
from .errors import ConfigError, DataError
from .priors import prior_from_dict
from .sparse_gp import EnsemblePrediction, SparseGPModel, build_model, predict_ensemble

FORMAT = "stvgp-ensemble"
FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class ArtifactVersionError(ConfigError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config)).hexdigest()


@dataclass
class FittedEnsemble:
    model: SparseGPModel
    particles: np.ndarray
    stats: Standardizer
    time_origin: pd.Timestamp
    covariates: tuple[str, ...]
    model_spec: dict
    config: dict = field(default_factory=dict)
    inducing_rows: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    def standardized_design(self, lon, lat, times, covariates) -> np.ndarray:
        """Design matrix for raw lon/lat, timestamps and covariate values (n, c)."""
        raw = np.column_stack(
            [np.asarray(lon, float), np.asarray(lat, float), hours_since(times, self.time_origin), np.asarray(covariates, float)]
        )
        return self.stats.transform_X(raw)

    def predict(self, Xstd, include_noise: bool = False, n_samples: int = 0, rng=None) -> EnsemblePrediction:
        """Ensemble prediction in standardized units."""
        return predict_ensemble(self.model, self.particles, Xstd, n_samples, rng, include_noise)

    def predict_original(self, Xstd, include_noise: bool = False):
        """(ensemble mean, ensemble sd, per-particle means, per-particle variances) in data units."""
        ep = self.predict(Xstd, include_noise)
        pm = np.stack([self.stats.inverse_y(p.mean) for p in ep.per_particle])
        pv = np.stack([self.stats.inverse_var(p.variance) for p in ep.per_particle])
        return self.stats.inverse_y(ep.mean), np.sqrt(self.stats.inverse_var(ep.variance)), pm, pv

    # -- persistence -------------------------------------------------------
    def metadata(self) -> dict:
        return {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "model": self.model_spec,
            "standardization": self.stats.to_dict(),
            "time_origin": pd.Timestamp(self.time_origin).isoformat(),
            "covariates": list(self.covariates),
            "param_names": self.model.param_names(),
            "n_particles": int(self.n_particles),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {"Z": self.model.Z, "particles": self.particles}
        if self.inducing_rows is not None:
            arrays["inducing_rows"] = np.asarray(self.inducing_rows, dtype=np.int64)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            _write_entry(zf, "metadata.json", json.dumps(self.metadata(), sort_keys=True, indent=2).encode())
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
                _write_entry(zf, f"{name}.npy", buf.getvalue())
        return path

    @classmethod
    def load(cls, path) -> "FittedEnsemble":
        path = Path(path)
        try:
            with zipfile.ZipFile(path) as zf:
                meta = json.loads(zf.read("metadata.json"))
                arrays = {
                    n[:-4]: np.load(io.BytesIO(zf.read(n)), allow_pickle=False)
                    for n in zf.namelist()
                    if n.endswith(".npy")
                }
        except FileNotFoundError:
            raise DataError(f"no such artifact: {path}") from None
        except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"{path} is not an ensemble artifact: {exc}") from None
        if meta.get("format") != FORMAT:
            raise DataError(f"{path} is not an ensemble artifact")
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise ArtifactVersionError(
                f"{path} has format version {version}; this build reads version {FORMAT_VERSION}. "
                "Re-run `fit` to regenerate the artifact."
            )
        spec = meta["model"]
        model = model_from_spec(spec, arrays["Z"])
        return cls(
            model=model,
            particles=arrays["particles"],
            stats=Standardizer.from_dict(meta["standardization"]),
            time_origin=pd.Timestamp(meta["time_origin"]),
            covariates=tuple(meta["covariates"]),
            model_spec=spec,
            config=meta["config"],
            inducing_rows=arrays.get("inducing_rows"),
        )


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def model_spec(model: SparseGPModel, kernel: str, mean: str, n_covariates: int) -> dict:
    return {
        "kernel": kernel,
        "mean": mean,
        "n_covariates": n_covariates,
        "jitter": model.jitter,
        "priors": {name: p.to_dict() for name, p in model.priors.items()},
    }


def model_from_spec(spec: dict, Z: np.ndarray) -> SparseGPModel:
    overrides = {name: prior_from_dict(d) for name, d in spec["priors"].items()}
    return build_model(
        Z,
        n_covariates=spec["n_covariates"],
        kernel=spec["kernel"],
        mean=spec["mean"],
        prior_overrides=overrides,
        jitter=spec["jitter"],
    )
