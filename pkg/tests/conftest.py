import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fit_frame(raw_X, y, covariates, origin="2020-01-01", m=20, schedule=((0.02, 300),), J=4, batch_size=100, seed=0):
    """Small end-to-end fit on an in-memory design (lon, lat, hours, covariates)."""
    import pandas as pd

    from stvgp.config import RunConfig
    from stvgp.data import Dataset, Standardizer
    from stvgp.pipeline import fit_dataset

    covariates = tuple(covariates)
    stats = Standardizer.fit(["lon", "lat", "time_hours", *covariates, "y"], np.column_stack([raw_X, y]))
    ds = Dataset(
        X=stats.transform_X(raw_X), y=stats.transform_y(y), raw_X=raw_X, raw_y=y,
        stats=stats, time_origin=pd.Timestamp(origin), covariates=covariates,
    )
    cfg = RunConfig.from_dict({
        "seed": seed,
        "data": {"covariates": list(covariates), "target": "y"},
        "kdpp": {"k": m, "mcmc_steps": 200},
        "svgd": {"n_particles": J, "schedule": [list(s) for s in schedule], "batch_size": batch_size, "log_every": 0},
    })
    return fit_dataset(ds, cfg).fitted


@pytest.fixture(scope="session")
def sine_fit():
    """Noiseless sin of time; lon, lat and the covariate carry no signal."""
    rng = np.random.default_rng(0)
    n = 400
    hours = rng.uniform(0, 240, n)
    raw = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(50, 54, n), hours, rng.normal(size=n)])
    y = 20 + 5 * np.sin(2 * np.pi * hours / 160)
    return fit_frame(raw, y, ["c1"], m=25, schedule=((0.02, 400), (0.005, 200))), raw, y


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
