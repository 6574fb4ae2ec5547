"""Run configuration: a JSON document with fixed sections.

Every section is optional in the file; missing keys take defaults and unknown
keys are rejected.  ``RunConfig.from_dict(cfg.to_dict()) == cfg`` holds for
any valid config.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import DEFAULT_COVARIATES, DEFAULT_TARGET
from .errors import ConfigError
from .kdpp import KDPPConfig
from .kernels import KERNEL_PRESETS
from .priors import DEFAULT_PRIORS, prior_from_dict
from .svgd import DEFAULT_SCHEDULE, SVGDConfig

INIT_STRATEGIES = ("prior", "data", "neutral")


def _strict(cls, d, section: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


@dataclass
class DataSection:
    path: str | None = None
    covariates: list[str] = field(default_factory=lambda: list(DEFAULT_COVARIATES))
    target: str = DEFAULT_TARGET

    def __post_init__(self):
        self.covariates = list(self.covariates)
        if len(set(self.covariates)) != len(self.covariates):
            raise ConfigError(f"duplicate covariate names: {self.covariates}")


@dataclass
class ModelSection:
    kernel: str = "default"
    mean: str = "linear"
    jitter: float = 1e-6
    # prior per parameter kind, e.g. {"variance": {"kind": "gamma", "shape": 2, "scale": 2}}
    priors: dict = field(default_factory=dict)
    # prior per parameter name, e.g. {"white.variance": {...}}
    prior_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kernel not in KERNEL_PRESETS:
            raise ConfigError(f"unknown kernel preset {self.kernel!r}; choose from {sorted(KERNEL_PRESETS)}")
        if self.mean not in ("linear", "zero"):
            raise ConfigError(f"unknown mean {self.mean!r}")
        if not self.jitter > 0:
            raise ConfigError("jitter must be positive")
        unknown = sorted(set(self.priors) - set(DEFAULT_PRIORS))
        if unknown:
            raise ConfigError(f"unknown prior kinds {unknown}; known kinds {sorted(DEFAULT_PRIORS)}")
        # validate eagerly so errors surface at load time
        self.prior_kinds()
        self.overrides()

    def prior_kinds(self) -> dict:
        out = dict(DEFAULT_PRIORS)
        out.update({k: prior_from_dict(v) for k, v in self.priors.items()})
        return out

    def overrides(self) -> dict:
        return {k: prior_from_dict(v) for k, v in self.prior_overrides.items()}


@dataclass
class SVGDSection:
    n_particles: int = 10
    schedule: list = field(default_factory=lambda: [list(s) for s in DEFAULT_SCHEDULE])
    batch_size: int = 250
    bandwidth: str | float = "median"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 100

    def __post_init__(self):
        self.schedule = [[float(lr), int(n)] for lr, n in self.schedule]
        self.build(0)

    def build(self, seed: int) -> SVGDConfig:
        return SVGDConfig(
            n_particles=self.n_particles,
            schedule=[tuple(s) for s in self.schedule],
            batch_size=self.batch_size,
            bandwidth=self.bandwidth,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            seed=seed,
            log_every=self.log_every,
        )


@dataclass
class KDPPSection:
    k: int = 1000
    mcmc_steps: int = 10000
    pool_size: int | None = 20000
    lengthscale_pairs: int = 2000
    jitter: float = 1e-6
    refresh_every: int = 200

    def __post_init__(self):
        self.build(0)

    def build(self, seed: int) -> KDPPConfig:
        return KDPPConfig(seed=seed, **asdict(self))


@dataclass
class InitSection:
    """How particles start.

    ``prior``: every parameter, including ``u``, drawn from its prior.
    ``data``: hyperparameters from their priors, ``u`` from the standardized
    responses at the inducing rows.
    ``neutral``: hyperparameters at the kernel defaults plus
    ``hyper_jitter`` Gaussian noise in unconstrained space, ``u`` from data.
    """

    strategy: str = "neutral"
    u_jitter: float = 0.0
    hyper_jitter: float = 0.3

    def __post_init__(self):
        if self.strategy not in INIT_STRATEGIES:
            raise ConfigError(f"init strategy must be one of {INIT_STRATEGIES}, got {self.strategy!r}")
        if self.u_jitter < 0 or self.hyper_jitter < 0:
            raise ConfigError("init jitter must be non-negative")


@dataclass
class OutputSection:
    dir: str = "out"
    artifact: str = "ensemble.stvgp"
    trace: str = "trace.csv"


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    svgd: SVGDSection = field(default_factory=SVGDSection)
    kdpp: KDPPSection = field(default_factory=KDPPSection)
    init: InitSection = field(default_factory=InitSection)
    output: OutputSection = field(default_factory=OutputSection)

    _sections = {
        "data": DataSection,
        "model": ModelSection,
        "svgd": SVGDSection,
        "kdpp": KDPPSection,
        "init": InitSection,
        "output": OutputSection,
    }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - {"seed", *cls._sections})
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {unknown}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        parts = {name: _strict(sec, d.get(name), name) for name, sec in cls._sections.items()}
        return cls(seed=seed, **parts)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path
