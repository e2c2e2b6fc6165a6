import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from transdens.flow import discrete_flow_map, flow_map
from transdens.frozen import (EllipticityError, frozen_chain_density, frozen_chain_density_grid,
                              frozen_derivative, frozen_density, frozen_params)
from transdens.grid import Grid
from transdens.model import builtin

from conftest import custom_model

SQ2PI = math.sqrt(2 * math.pi)


def test_params_zero_drift(constant):
    model, _ = constant
    fg = frozen_params(model, 0.0, 1.0, [0.4], [1.1])
    assert fg.mean[0] == pytest.approx(0.4)
    assert fg.cov[0, 0] == pytest.approx(1.0)


def test_params_ou(ou):
    model, _ = ou
    fg = frozen_params(model, 0.0, 1.0, [0.0], [1.0])
    assert fg.mean[0] == pytest.approx(1 - math.e, abs=1e-9)
    assert fg.cov[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_params_time_dependent_diffusion():
    model = custom_model(lambda t, x: np.zeros_like(x),
                         lambda t, x: np.full(x.shape[:-1] + (1, 1), 1.0 + t), Lambda=2.0)
    assert frozen_params(model, 0.0, 1.0, [0.0], [0.0]).cov[0, 0] == pytest.approx(1.5, abs=1e-12)


def test_params_covariance_in_ellipticity_band():
    model, _ = builtin("holder_drift")
    lam = model.regularity.Lambda
    for s in (0.3, 1.0):
        c = frozen_params(model, 0.0, s, [0.0], [1.2]).cov[0, 0]
        assert s / lam <= c <= s * lam


def test_params_reject_bad_times(ou):
    with pytest.raises(ValueError):
        frozen_params(ou[0], 0.5, 0.5, [0.0], [0.0])


def test_params_non_pd_rejected():
    model = custom_model(lambda t, x: np.zeros_like(x),
                         lambda t, x: np.full(x.shape[:-1] + (1, 1), -1.0))
    with pytest.raises(EllipticityError):
        frozen_params(model, 0.0, 1.0, [0.0], [0.0])


def test_density_values(constant):
    model, _ = constant
    assert frozen_density(model, 0.0, 1.0, [0.3], [0.3]) == pytest.approx(1 / SQ2PI, rel=1e-12)
    assert frozen_density(model, 0.0, 1.0, [0.0], [1.0]) == pytest.approx(0.241971, abs=1e-6)
    m2, _ = builtin("constant", {"d": 2})
    assert frozen_density(m2, 0.0, 1.0, [0.1, 0.2], [0.1, 0.2]) == pytest.approx(1 / (2 * math.pi))


def test_density_ou_closed_form(ou):
    model, _ = ou
    y = 0.7
    for x in (-1.0, 0.0, 2.0):
        expected = stats.norm.pdf(x - y * math.exp(0.6), scale=math.sqrt(0.6))
        assert frozen_density(model, 0.2, 0.8, [x], [y]) == pytest.approx(expected, rel=1e-9)


def test_mass_in_x_is_one_and_in_y_matches_flow_jacobian(ou):
    model, _ = ou
    xs = np.linspace(-12, 12, 4001)[:, None]
    vals = frozen_density(model, 0.0, 1.0, xs, [0.5])
    assert integrate.trapezoid(vals, xs[:, 0]) == pytest.approx(1.0, abs=1e-6)
    ys = np.linspace(-6, 6, 401)
    in_y = [frozen_density(model, 0.0, 1.0, [0.4], [y]) for y in ys]
    # the anchor enters through theta(y) = y e^dt, so the y-mass is e^{-dt}
    assert integrate.trapezoid(in_y, ys) == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_derivative_examples(constant):
    model, _ = constant
    assert frozen_derivative(model, 0.0, 1.0, [0.2], [0.7], [0]) == frozen_density(model, 0.0, 1.0, [0.2], [0.7])
    assert frozen_derivative(model, 0.0, 1.0, [0.5], [0.5], [1]) == pytest.approx(0.0, abs=1e-15)
    assert frozen_derivative(model, 0.0, 1.0, [0.5], [0.5], [2]) == pytest.approx(-1 / SQ2PI, rel=1e-12)
    with pytest.raises(ValueError):
        frozen_derivative(model, 0.0, 1.0, [0.5], [0.5], [5])


def _fd(model, x, y, nu, h=2e-3):
    # central differences of the next-lower analytic derivative, which is itself exact
    lo = frozen_derivative(model, 0.0, 0.6, x - h, y, nu - 1)
    hi = frozen_derivative(model, 0.0, 0.6, x + h, y, nu - 1)
    lo2 = frozen_derivative(model, 0.0, 0.6, x - 2 * h, y, nu - 1)
    hi2 = frozen_derivative(model, 0.0, 0.6, x + 2 * h, y, nu - 1)
    return (8 * (hi - lo) - (hi2 - lo2)) / (12 * h)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.integers(1, 4))
def test_derivative_matches_finite_differences(x, y, nu):
    model, _ = builtin("ou")
    theta = flow_map(model, 0.0, 0.6, [y])[0]
    if frozen_density(model, 0.0, 0.6, [x], [y]) < 1e-8:
        return
    exact = frozen_derivative(model, 0.0, 0.6, [x], [y], [nu])
    approx = _fd(model, np.array([x]), [y], nu)
    scale = max(abs(exact), 1e-3 * frozen_density(model, 0.0, 0.6, [theta], [y]))
    assert abs(exact - approx) / scale < 1e-5


def test_derivative_mixed_d2():
    model, _ = builtin("ou", {"d": 2})
    x, y, h = np.array([0.3, -0.2]), [0.4, 0.1], 1e-4
    f = lambda p: frozen_derivative(model, 0.0, 0.5, p, y, [0, 1])
    fd = (f(x + [h, 0]) - f(x - [h, 0])) / (2 * h)
    assert frozen_derivative(model, 0.0, 0.5, x, y, [1, 1]) == pytest.approx(fd, rel=1e-6)


def test_gaussian_majorant_holds():
    model, _ = builtin("holder_drift")
    rng = np.random.default_rng(1)
    ratios = []
    for _ in range(200):
        t, s = sorted(rng.uniform(0, 1, 2))
        if s - t < 0.05:
            continue
        x, y, nu = rng.uniform(-2, 2), rng.uniform(-2, 2), int(rng.integers(0, 5))
        th = flow_map(model, t, s, [y])[0]
        val = abs(frozen_derivative(model, t, s, [x], [y], [nu]))
        C = 4.0 * model.regularity.Lambda
        bound = (s - t) ** (-(nu + 1) / 2) * math.exp(-(th - x) ** 2 / (C * (s - t)))
        ratios.append(val / bound)
    assert max(ratios) < 10.0


# -- frozen chain ----------------------------------------------------------------

def test_chain_one_step_closed_form(ou):
    _, chain = ou
    y = 0.6
    grid = Grid.around([0.0], 3.0, 0.25 / math.sqrt(chain.n))
    g = frozen_chain_density_grid(chain, 5, 6, [y], grid)
    theta = discrete_flow_map(chain, 5, 6, [y])[0]
    x = grid.points()[:, 0]
    expected = stats.norm.pdf(theta - x, scale=1 / math.sqrt(chain.n))
    assert np.max(np.abs(g.values.ravel() - expected)) < 1e-8


def test_chain_sum_of_gaussians(constant):
    _, chain = constant
    grid = Grid.around([0.0], 7.0, 0.25 / math.sqrt(chain.n))
    g = frozen_chain_density_grid(chain, 0, chain.n, [0.5], grid)
    x = grid.points()[:, 0]
    assert np.max(np.abs(g.values.ravel() - stats.norm.pdf(x, loc=0.5))) < 1e-4
    assert 0.98 <= g.mass <= 1.001


def test_chain_student_two_steps_brute_force():
    _, chain = builtin("ou", {"n": 16, "innovations": "student", "S": 10.0})
    i, j, y = 3, 5, 0.4
    grid = Grid.around([0.0], 3.0, 0.25 / math.sqrt(chain.n) / 2)
    g = frozen_chain_density_grid(chain, i, j, [y], grid)
    theta = discrete_flow_map(chain, i, j, [y])[0]
    n = chain.n
    fam = chain.innovations
    step = lambda w: math.sqrt(n) * float(fam.density_with_cov(np.array([math.sqrt(n) * w]), np.eye(1)))
    for x in (-0.3, 0.1, 0.5, 0.9):
        k = int(np.argmin(np.abs(grid.points()[:, 0] - x)))
        xk = grid.points()[k, 0]
        w = theta - xk
        oracle, _ = integrate.quad(lambda v: step(v) * step(w - v), -np.inf, np.inf, epsabs=1e-12)
        assert g.values.ravel()[k] == pytest.approx(oracle, rel=2e-3, abs=1e-6)
        assert frozen_chain_density(chain, i, j, [xk], [y])[0] == pytest.approx(oracle, rel=2e-3, abs=1e-6)


def test_chain_grid_too_coarse(constant):
    _, chain = constant
    grid = Grid.around([0.0], 3.0, 0.3 / math.sqrt(chain.n))
    with pytest.raises(ValueError):
        frozen_chain_density_grid(chain, 0, 4, [0.0], grid)


def test_grid_density_serialization(tmp_path, constant):
    _, chain = constant
    grid = Grid.around([0.0], 1.0, 0.0625)
    g = frozen_chain_density_grid(chain, 0, 4, [0.0], grid)
    from transdens.grid import GridDensity
    back = GridDensity.from_binary(g.to_binary(tmp_path / "g.bin"))
    assert np.array_equal(back.values, g.values) and back.grid == g.grid
    csv_back = GridDensity.from_csv(g.to_csv(tmp_path / "g.csv"))
    assert np.allclose(csv_back.values, g.values, rtol=0, atol=0)
