import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import central_diff
from stvgp.errors import ConfigError, DomainError, ShapeError
from stvgp.priors import (
    DEFAULT_PRIORS,
    IDENTITY,
    SOFTPLUS,
    Gamma,
    Gaussian,
    LinearMean,
    ParamInfo,
    ZeroMean,
    bind_priors,
    log_prior,
    log_prior_total,
    mean_eval,
    prior_from_dict,
    transform_forward,
    transform_inverse,
)
from stvgp.sparse_gp import build_model


def test_zero_linear_mean(rng):
    X = rng.normal(size=(5, 7))
    np.testing.assert_array_equal(mean_eval(LinearMean.zeros(7), X), np.zeros(5))
    np.testing.assert_array_equal(mean_eval(ZeroMean(7), X), np.zeros(5))


def test_linear_mean_value():
    m = LinearMean(np.r_[1.0, np.zeros(6)], 2.0)
    assert mean_eval(m, np.r_[3.0, np.ones(6)][None])[0] == pytest.approx(5.0)


def test_linear_mean_shape_error():
    with pytest.raises(ShapeError):
        mean_eval(LinearMean.zeros(7), np.zeros((3, 6)))


def test_linear_mean_gradient_matches_fd(rng):
    X = rng.normal(size=(9, 7))
    m = LinearMean(rng.normal(size=7), 0.4)
    theta = m.get_unconstrained()
    fd = central_diff(lambda t: m.with_unconstrained(t)(X).sum(), theta)
    np.testing.assert_allclose(m.grad(X, np.ones(9)), fd, atol=1e-6)


def test_gamma_and_gaussian_logpdf_values():
    assert log_prior(Gamma(1, 1), 1.0) == pytest.approx(-1.0)
    assert log_prior(Gaussian(0, 1), 0.0) == pytest.approx(-0.918939, abs=1e-6)
    assert log_prior(Gamma(2, 2), 2.0) == pytest.approx(-1.0 - math.log(2.0), abs=1e-12)
    assert -1.0 - math.log(2.0) == pytest.approx(-1.693147, abs=1e-6)


@given(st.floats(0.2, 5), st.floats(0.2, 5), st.floats(1e-3, 20))
def test_gamma_matches_scipy_shape_scale(k, s, x):
    assert Gamma(k, s).logpdf(x) == pytest.approx(stats.gamma(a=k, scale=s).logpdf(x), rel=1e-9, abs=1e-9)


def test_gamma_nonpositive_is_minus_infinity():
    assert Gamma(2, 2).logpdf(0.0) == -math.inf
    assert Gamma(2, 2).logpdf(-1.0) == -math.inf


@pytest.mark.parametrize("bad", [lambda: Gamma(0, 1), lambda: Gamma(1, -1), lambda: Gaussian(0, 0)])
def test_invalid_prior_parameters(bad):
    with pytest.raises(ConfigError):
        bad()


def test_prior_dict_round_trip():
    for p in (Gamma(2, 3), Gaussian(-1, 0.5)):
        assert prior_from_dict(p.to_dict()) == p
    with pytest.raises(ConfigError):
        prior_from_dict({"kind": "beta"})


def test_softplus_values():
    assert transform_forward(SOFTPLUS, 0.0) == pytest.approx(math.log(2.0))
    assert transform_forward(SOFTPLUS, -100.0) == 1e-6
    assert transform_inverse(SOFTPLUS, transform_forward(SOFTPLUS, 3.7)) == pytest.approx(3.7, abs=1e-9)


def test_softplus_inverse_domain():
    with pytest.raises(DomainError):
        transform_inverse(SOFTPLUS, 1e-6)
    with pytest.raises(DomainError):
        transform_inverse(SOFTPLUS, -2.0)


@given(st.floats(-6.9, 30))
def test_softplus_round_trip(x):
    y = SOFTPLUS.forward(x)
    if y > 1e-3:
        assert SOFTPLUS.inverse(y) == pytest.approx(x, abs=1e-9)


def test_softplus_monotone_and_derivative():
    x = np.linspace(-13, 20, 500)
    assert np.all(np.diff(SOFTPLUS.forward(x)) > 0)
    h = 1e-6
    fd = (SOFTPLUS.forward(x + h) - SOFTPLUS.forward(x - h)) / (2 * h)
    np.testing.assert_allclose(SOFTPLUS.grad(x), fd, rtol=1e-5, atol=1e-9)


def test_identity_transform():
    assert IDENTITY.forward(-3.0) == -3.0
    assert IDENTITY.inverse(2.0) == 2.0


def test_log_prior_total_single_gaussian():
    p = [ParamInfo("m", "slope", IDENTITY)]
    value, grad = log_prior_total(np.zeros(1), p, {"m": Gaussian(0, 1)})
    assert value == pytest.approx(-0.918939, abs=1e-6)
    assert grad[0] == 0.0


def test_log_prior_total_includes_jacobian():
    p = [ParamInfo("ell", "lengthscale", SOFTPLUS)]
    value, _ = log_prior_total(np.zeros(1), p, {"ell": Gamma(1, 1)})
    assert value == pytest.approx(-math.log(2.0) + math.log(0.5), abs=1e-12)


def test_log_prior_total_gradient(rng):
    params = [
        ParamInfo("a", "lengthscale", SOFTPLUS),
        ParamInfo("b", "variance", SOFTPLUS),
        ParamInfo("c", "slope", IDENTITY),
    ]
    priors = bind_priors(params)
    x = rng.normal(size=3)
    _, g = log_prior_total(x, params, priors)
    fd = central_diff(lambda v: log_prior_total(v, params, priors)[0], x)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_jacobian_makes_unconstrained_density_normalised():
    p = [ParamInfo("v", "variance", SOFTPLUS)]
    priors = {"v": Gamma(2, 2)}
    mass, _ = integrate.quad(lambda x: math.exp(log_prior_total(np.array([x]), p, priors)[0]), -30, 60, limit=200)
    assert mass == pytest.approx(1.0, rel=0.01)


def test_missing_prior_is_config_error():
    p = [ParamInfo("v", "mystery", SOFTPLUS)]
    with pytest.raises(ConfigError):
        bind_priors(p)
    with pytest.raises(ConfigError):
        log_prior_total(np.zeros(1), p, {})


def test_gamma_on_unconstrained_parameter_rejected():
    p = [ParamInfo("a", "slope", IDENTITY)]
    with pytest.raises(ConfigError):
        bind_priors(p, overrides={"a": Gamma(2, 2)})


def test_default_model_has_22_prior_bindings():
    model = build_model(np.zeros((3, 7)))
    assert len(model.priors) == 22
    kinds = {p.kind for p in model.hyper_info}
    assert kinds <= set(DEFAULT_PRIORS)
