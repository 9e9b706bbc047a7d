import numpy as np
import pytest

from regime_hjm.energy_curves import EnergyCurveGrid
from regime_hjm.energy_curves import EnergyCurveParams
from regime_hjm.linalg_core import GridFunction
from regime_hjm.linalg_core import RangeError
from regime_hjm.linalg_core import make_grid
from regime_hjm.market import DegenerateInterval
from regime_hjm.market import ForwardCurveModel
from regime_hjm.market import MarketError
from regime_hjm.market import bond_price
from regime_hjm.market import forward_curve
from regime_hjm.market import forward_rate
from regime_hjm.market import futures_price
from regime_hjm.market import hjm_coefficients
from regime_hjm.market import short_rate
from regime_hjm.market import zero_yield
from regime_hjm.rate_curves import RateCurveParams


def tabulated_energy(c, u=None, x_max=4.0):
    """energy model whose curves are given functions of x (one regime, one factor)"""
    grid = make_grid(x_max, 1e-3)
    U = np.zeros((len(grid), 1, 1)) if u is None else u(grid).reshape(-1, 1, 1)
    params = EnergyCurveParams(0.1, [[0.0]], np.zeros((2, 1, 1)), [[U[0, 0, 0]]], [c(grid)[0]])
    curves = EnergyCurveGrid(grid, GridFunction(grid, U), GridFunction(grid, c(grid)[:, None]))
    return ForwardCurveModel("energy", curves, params)


def vasicek_like(beta, u0, c0, x_max=5.0):
    params = RateCurveParams([[0.0]], [u0], [c0], [[beta]], [[[0.0]]], [[0.0]], [[[0.0]]])
    return ForwardCurveModel.rates(params, make_grid(x_max, 1e-3))


def test_flat_energy_curve():
    model = tabulated_energy(lambda x: np.full_like(x, 0.7))
    assert futures_price(model, 1.0, 2.5, [0.3], 0) == pytest.approx(0.7, abs=1e-14)
    assert forward_rate(model, 3.3, [0.3], 0) == pytest.approx(0.7, abs=1e-14)


def test_linear_curve_average():
    model = tabulated_energy(lambda x: x)
    assert futures_price(model, 1.0, 3.0, [0.0], 0) == pytest.approx(2.0, abs=1e-12)


def test_futures_near_a_point():
    model = tabulated_energy(lambda x: np.sin(x))
    eps = 1e-3
    near = futures_price(model, 1.2, 1.2 + eps, [0.0], 0)
    assert abs(near - forward_rate(model, 1.2, [0.0], 0)) <= eps


def test_futures_is_length_weighted(energy_model):
    y = [0.1, 0.2]
    whole = futures_price(energy_model, 1.0, 4.0, y, 1) * 3.0
    parts = futures_price(energy_model, 1.0, 2.5, y, 1) * 1.5 + futures_price(energy_model, 2.5, 4.0, y, 1) * 1.5
    assert abs(whole - parts) <= 1e-12


def test_futures_errors(energy_model, rates_model):
    with pytest.raises(DegenerateInterval):
        futures_price(energy_model, 2.0, 2.0, [0.0, 0.0], 0)
    with pytest.raises(RangeError):
        futures_price(energy_model, 9.0, 11.0, [0.0, 0.0], 0)
    with pytest.raises(MarketError):
        futures_price(rates_model, 1.0, 2.0, [0.0, 0.0], 0)


def test_forward_rate_at_origin(energy_model):
    c = energy_model.curves.c.at(2.0)
    assert forward_rate(energy_model, 2.0, [0.0, 0.0], 1) == pytest.approx(c[1], abs=0)


def test_forward_rate_two_regime_example(energy_model):
    k = 1500
    x = energy_model.curves.grid[k]
    u = energy_model.curves.u.values[k]
    c = energy_model.curves.c.values[k]
    expected = c[0] + 0.1 * u[0, 0] + 0.2 * u[1, 0]
    assert forward_rate(energy_model, x, [0.1, 0.2], 0) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("model_name", ["energy_model", "rates_model"])
def test_forward_rate_is_affine(model_name, request):
    model = request.getfixturevalue(model_name)
    y = np.array([0.3, -0.2])
    f0 = forward_rate(model, 1.7, 0 * y, 1)
    f1 = forward_rate(model, 1.7, y, 1)
    f2 = forward_rate(model, 1.7, 2 * y, 1)
    assert abs(f2 - 2 * f1 + f0) <= 1e-14


def test_forward_rate_vectorized(energy_model):
    y = np.array([[0.1, 0.2], [0.0, 0.5]])
    z = np.array([0, 1])
    values = forward_rate(energy_model, 0.8, y, z)
    for k in range(2):
        assert values[k] == pytest.approx(forward_rate(energy_model, 0.8, y[k], z[k]))


def test_forward_curve_matches_pointwise(rates_model):
    curve = forward_curve(rates_model, [0.1, 0.2], 1)
    grid = rates_model.curves.grid
    assert curve.shape == grid.shape
    for k in 0, 777, 10000:
        assert curve[k] == pytest.approx(forward_rate(rates_model, grid[k], [0.1, 0.2], 1), rel=1e-14)


def test_forward_rate_outside_grid(rates_model):
    with pytest.raises(RangeError):
        forward_rate(rates_model, 10.5, [0.0, 0.0], 0)


def test_hjm_coefficients():
    model = tabulated_energy(lambda x: 0 * x, u=lambda x: 1 + 0 * x)
    drift, vol = hjm_coefficients(model, 1.0, [0.4], 0, [[2.0]], [0.0])
    assert drift == 0
    np.testing.assert_allclose(vol, [2.0])


def test_hjm_coefficients_by_hand(rates_model):
    # rates loadings do not depend on the regime; u(0) = (0.9, 0.6)
    drift, vol = hjm_coefficients(rates_model, 0.0, [0.1, 0.2], 0, np.eye(2), [0.09, 0.2])
    assert drift == pytest.approx(0.9 * 0.09 + 0.6 * 0.2)
    np.testing.assert_allclose(vol, [0.9, 0.6])


def test_hjm_drift_inner_product():
    grid = make_grid(1.0, 0.5)
    params = RateCurveParams([[0.0]], [1.0, 2.0], [0.0], np.zeros((2, 2)), np.zeros((2, 2, 2)), [[0.0, 0.0]], [np.zeros((2, 2))])
    model = ForwardCurveModel.rates(params, grid)
    drift, _ = hjm_coefficients(model, 0.5, [0.0, 0.0], 0, np.eye(2), [0.09, 0.2])
    assert drift == pytest.approx(0.49)


def test_short_rate_two_regime_example(rates_model):
    assert short_rate(rates_model, [0.1, 0.2], 0) == pytest.approx(1.21, abs=1e-12)
    assert short_rate(rates_model, [0.0, 0.0], 1) == pytest.approx(1.5, abs=1e-12)


def test_short_rate_needs_rates(energy_model):
    with pytest.raises(MarketError):
        short_rate(energy_model, [0.0, 0.0], 0)
    with pytest.raises(MarketError):
        energy_model.require("rates")


def test_bond_price_flat():
    model = vasicek_like(0.0, 0.0, 0.03)
    assert bond_price(model, 0.0, [0.5], 0) == 1.0
    assert bond_price(model, 4.0, [0.5], 0) == pytest.approx(np.exp(-0.12), rel=1e-12)
    assert zero_yield(model, 2.5, [0.5], 0) == pytest.approx(0.03, rel=1e-10)


def test_bond_price_exponential_loading():
    beta, u0, c0, y = -0.6, 0.8, 0.02, 0.3
    model = vasicek_like(beta, u0, c0)
    for tau in 0.5, 2.0, 4.321:
        exact = np.exp(-(c0 * tau + y * u0 * np.expm1(beta * tau) / beta))
        assert abs(bond_price(model, tau, [y], 0) - exact) <= 1e-9


def test_bond_price_decreasing(rates_model):
    taus = np.linspace(0, 10, 41)
    prices = [bond_price(rates_model, tau, [0.1, 0.2], 1) for tau in taus]
    assert (np.diff(prices) < 0).all()
    assert prices[0] == 1.0


def test_bond_price_range(rates_model, energy_model):
    with pytest.raises(RangeError):
        bond_price(rates_model, 10.5, [0.1, 0.2], 0)
    with pytest.raises(RangeError):
        bond_price(rates_model, -1.0, [0.1, 0.2], 0)
    with pytest.raises(MarketError):
        bond_price(energy_model, 1.0, [0.1, 0.2], 0)


def test_discount_rate_only_for_energy(energy_model, rates_model):
    assert energy_model.r == 0.1
    with pytest.raises(MarketError):
        rates_model.r


def test_c_shift(rates_model):
    shifted = rates_model.with_c_shift(1, 0.01)
    np.testing.assert_allclose(shifted.curves.c.values[:, 1], rates_model.curves.c.values[:, 1] + 0.01)
    np.testing.assert_array_equal(shifted.curves.c.values[:, 0], rates_model.curves.c.values[:, 0])
    np.testing.assert_array_equal(shifted.curves.c.slopes, rates_model.curves.c.slopes)


def test_unknown_market():
    with pytest.raises(MarketError):
        ForwardCurveModel("gas", None, None)
