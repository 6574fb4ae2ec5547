import json

import pytest

from stvgp.config import RunConfig
from stvgp.errors import ConfigError
from stvgp.priors import Gamma


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    path = cfg.save(tmp_path / "c.json")
    assert RunConfig.load(path) == cfg


def test_default_values():
    cfg = RunConfig()
    assert cfg.svgd.n_particles == 10
    assert cfg.svgd.schedule == [[0.01, 500], [0.005, 500], [0.001, 500]]
    assert cfg.svgd.batch_size == 250
    assert cfg.kdpp.k == 1000
    assert cfg.init.strategy == "neutral"


def test_partial_sections_take_defaults():
    cfg = RunConfig.from_dict({"seed": 7, "svgd": {"n_particles": 3}})
    assert cfg.seed == 7 and cfg.svgd.n_particles == 3 and cfg.svgd.batch_size == 250
    assert cfg.svgd.build(cfg.seed).seed == 7


def test_prior_overrides_parse():
    cfg = RunConfig.from_dict(
        {"model": {"priors": {"variance": {"kind": "gamma", "shape": 2, "scale": 1}},
                   "prior_overrides": {"white.variance": {"kind": "gamma", "shape": 1, "scale": 0.1}}}}
    )
    assert cfg.model.prior_kinds()["variance"] == Gamma(2, 1)
    assert cfg.model.overrides()["white.variance"] == Gamma(1, 0.1)


@pytest.mark.parametrize(
    "doc",
    [
        {"sed": 1},
        {"svgd": {"n_particle": 3}},
        {"model": {"kernel": "nope"}},
        {"model": {"priors": {"lenghtscale": {"kind": "gamma", "shape": 1, "scale": 1}}}},
        {"model": {"priors": {"variance": {"kind": "beta"}}}},
        {"init": {"strategy": "random"}},
        {"seed": -1},
        {"seed": True},
        {"data": {"covariates": ["a", "a"]}},
        {"svgd": "fast"},
        [],
    ],
)
def test_invalid_configs_raise(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)
    ok = tmp_path / "ok.json"
    ok.write_text(json.dumps({"kdpp": {"k": 5}}))
    assert RunConfig.load(ok).kdpp.k == 5
