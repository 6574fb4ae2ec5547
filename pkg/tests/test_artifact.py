import io
import json
import zipfile

import numpy as np
import pytest

from conftest import fit_frame
from stvgp.artifact import ArtifactVersionError, FittedEnsemble, config_hash
from stvgp.data import Standardizer
from stvgp.errors import ConfigError, DataError


def small_problem(seed=3):
    rng = np.random.default_rng(seed)
    n = 120
    raw = np.column_stack([rng.uniform(0, 1, n), rng.uniform(50, 51, n), rng.uniform(0, 48, n), rng.normal(size=n)])
    y = 30 + 3 * np.sin(raw[:, 2] / 8) + raw[:, 3] + 0.3 * rng.normal(size=n)
    return raw, y


@pytest.fixture(scope="module")
def fitted():
    raw, y = small_problem()
    return fit_frame(raw, y, ["c1"], m=10, schedule=((0.02, 40),), J=3, batch_size=50, seed=5)


def query(fitted):
    rng = np.random.default_rng(0)
    return rng.normal(size=(15, fitted.model.Z.shape[1]))


def test_save_is_byte_identical_across_fits(tmp_path, fitted):
    raw, y = small_problem()
    again = fit_frame(raw, y, ["c1"], m=10, schedule=((0.02, 40),), J=3, batch_size=50, seed=5)
    a, b = fitted.save(tmp_path / "a.stvgp"), again.save(tmp_path / "b.stvgp")
    assert a.read_bytes() == b.read_bytes()


def test_different_seed_changes_artifact(tmp_path, fitted):
    raw, y = small_problem()
    other = fit_frame(raw, y, ["c1"], m=10, schedule=((0.02, 40),), J=3, batch_size=50, seed=6)
    assert fitted.save(tmp_path / "a").read_bytes() != other.save(tmp_path / "b").read_bytes()


def test_reload_predicts_identically(tmp_path, fitted):
    loaded = FittedEnsemble.load(fitted.save(tmp_path / "e.stvgp"))
    Xs = query(fitted)
    p0, p1 = fitted.predict(Xs), loaded.predict(Xs)
    np.testing.assert_allclose(p1.mean, p0.mean, rtol=0, atol=1e-12)
    np.testing.assert_allclose(p1.variance, p0.variance, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(loaded.particles, fitted.particles)
    assert loaded.time_origin == fitted.time_origin
    assert loaded.covariates == fitted.covariates
    np.testing.assert_array_equal(loaded.inducing_rows, fitted.inducing_rows)


def test_metadata_contents(tmp_path, fitted):
    path = fitted.save(tmp_path / "e.stvgp")
    with zipfile.ZipFile(path) as zf:
        assert sorted(zf.namelist()) == ["Z.npy", "inducing_rows.npy", "metadata.json", "particles.npy"]
        meta = json.loads(zf.read("metadata.json"))
    assert meta["format_version"] == 1
    assert meta["config_hash"] == config_hash(fitted.config)
    assert len(meta["param_names"]) == fitted.model.n_params
    raw, y = small_problem()
    recomputed = Standardizer.fit(meta["standardization"]["columns"], np.column_stack([raw, y]))
    np.testing.assert_allclose(meta["standardization"]["mean"], recomputed.mean, rtol=1e-14)
    np.testing.assert_allclose(meta["standardization"]["sd"], recomputed.sd, rtol=1e-14)


def rewrite_metadata(src, dst, **changes):
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for name in zin.namelist():
            data = zin.read(name)
            if name == "metadata.json":
                meta = json.loads(data)
                meta.update(changes)
                data = json.dumps(meta).encode()
            zout.writestr(name, data)
    return dst


def test_version_mismatch_is_config_error(tmp_path, fitted):
    path = fitted.save(tmp_path / "e.stvgp")
    bad = rewrite_metadata(path, tmp_path / "v2.stvgp", format_version=2)
    with pytest.raises(ArtifactVersionError, match="version 2"):
        FittedEnsemble.load(bad)
    assert issubclass(ArtifactVersionError, ConfigError)


def test_not_an_artifact(tmp_path):
    junk = tmp_path / "junk"
    junk.write_bytes(b"plain bytes")
    with pytest.raises(DataError):
        FittedEnsemble.load(junk)
    with pytest.raises(DataError):
        FittedEnsemble.load(tmp_path / "absent")
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("metadata.json", json.dumps({"format": "other"}))
    (tmp_path / "other.zip").write_bytes(buf.getvalue())
    with pytest.raises(DataError):
        FittedEnsemble.load(tmp_path / "other.zip")
