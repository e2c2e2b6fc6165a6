import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transdens.model import (BUILTIN_NAMES, RegularityMeta, SamplePlan, StudentInnovations,
                             builtin, discrepancies, validate)

from conftest import custom_model


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_pass_validation(name):
    model, chain = builtin(name, {"n": 32})
    plan = SamplePlan(points=1000)
    assert validate(model, plan).passed
    assert validate(chain, plan, model).passed


def test_constant_model_empirical_constants():
    model, _ = builtin("constant", {"d": 1})
    rep = validate(model, SamplePlan(points=1000))
    assert rep.empirical["Lambda"] == 1.0
    assert rep.empirical["K"] == 0.0
    assert np.allclose(model.b(0.3, np.array([[2.0]])), 0.0)
    assert np.allclose(model.a(0.3, np.array([[2.0]])), 1.0)


def test_ou_model_constants():
    model, chain = builtin("ou", {"kappa": 1.0, "d": 1})
    assert np.allclose(model.b(0.0, np.array([[1.5]])), -1.5)
    rep = validate(model, SamplePlan(points=1000))
    assert rep.empirical["K"] < 1e-12
    assert rep.empirical["B"] == pytest.approx(1.0, abs=0.05)
    db, da = discrepancies(model, chain, points=1000)
    assert db == 0.0 and da == 0.0


def test_quadratic_drift_fails_linear_growth():
    model = custom_model(lambda t, x: x ** 2, B=2.0)
    rep = validate(model, SamplePlan(lo=-2.0, hi=2.0, points=1000))
    assert not rep.passed
    failed = {c.name for c in rep.checks if not c.passed}
    assert any("growth" in name or "drift" in name for name in failed)


def test_nonfinite_coefficient_reported_not_raised():
    model = custom_model(lambda t, x: np.where(x > 0, np.inf, 0.0) + 0 * x)
    rep = validate(model, SamplePlan(points=200))
    assert not rep.passed
    assert not rep["finite"].passed


def test_holder_diffusion_ellipticity():
    model, _ = builtin("holder_drift", {"gamma": 0.5})
    lam = model.regularity.Lambda
    x = np.linspace(-3, 3, 2001)[:, None]
    a = model.a(0.5, x)[:, 0, 0]
    assert a.min() >= 1.0 / lam and a.max() <= lam
    amp = 0.5 * (1 + 1 / lam) / 2
    assert np.allclose(a, 1 + amp * np.minimum(1.0, np.abs(x[:, 0]) ** 0.5))


def test_perturbed_pair_discrepancies_match_request():
    model, chain = builtin("perturbed_pair", {"delta_b": 0.05, "delta_a": 0.1})
    db, da = discrepancies(model, chain, points=10_000)
    assert db == pytest.approx(0.05, rel=0.05)
    assert da == pytest.approx(0.1, rel=0.05)


def test_builtin_errors():
    with pytest.raises(ValueError):
        builtin("nope")
    with pytest.raises(ValueError):
        builtin("ou", {"sigma": 0.0})
    with pytest.raises(ValueError):
        builtin("ou", {"unknown_key": 1})
    with pytest.raises(ValueError):
        RegularityMeta(gamma=1.5)
    with pytest.raises(ValueError):
        RegularityMeta(Lambda=0.5)


def test_chain_diffusion_equals_innovation_covariance():
    _, chain = builtin("holder_drift", {"innovations": "student", "n": 16})
    x = np.linspace(-2, 2, 9)[:, None]
    assert np.allclose(chain.a(0.2, x), chain.innovations.cov(0.2, x))


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(0.5, 2.0))
def test_student_moments(x, var):
    fam = StudentInnovations(1, lambda t, p: np.full(p.shape[:-1] + (1, 1), var), S=10.0)
    z = np.linspace(-400, 400, 400_001)[:, None]
    q = fam.density(0.0, np.array([[x]]), z)
    h = z[1, 0] - z[0, 0]
    assert np.sum(q) * h == pytest.approx(1.0, abs=1e-6)
    assert abs(np.sum(q * z[:, 0]) * h) < 1e-8
    assert np.sum(q * z[:, 0] ** 2) * h == pytest.approx(var, rel=1e-4)


def test_student_polynomial_tail():
    fam = StudentInnovations(1, lambda t, p: np.ones(p.shape[:-1] + (1, 1)), S=10.0)
    z = np.array([[10.0], [100.0], [1000.0]])
    q = fam.density(0.0, np.zeros((1, 1)), z)
    slopes = np.diff(np.log(q)) / np.diff(np.log(z[:, 0]))
    assert slopes[-1] == pytest.approx(-10.0, abs=0.05)


def test_student_sampler_matches_covariance():
    fam = StudentInnovations(2, lambda t, p: np.broadcast_to(np.array([[2.0, 0.5], [0.5, 1.0]]),
                                                              p.shape[:-1] + (2, 2)), S=12.0)
    rng = np.random.default_rng(3)
    z = fam.sample(0.0, np.zeros((200_000, 2)), rng)
    cov = np.cov(z.T)
    assert np.allclose(cov, [[2.0, 0.5], [0.5, 1.0]], atol=0.05)


def test_student_rejects_light_tail():
    with pytest.raises(ValueError):
        StudentInnovations(1, lambda t, p: np.ones(p.shape[:-1] + (1, 1)), S=8.0)


def test_rate_exponent():
    assert RegularityMeta(gamma=0.5).rate_exponent == 0.25
    assert RegularityMeta().rate_exponent == 0.5
    assert math.isfinite(RegularityMeta(B=3.0).B)
