"""prices and rates read off a solved forward curve model"""
import logging

import numpy as np

from regime_hjm.energy_curves import solve_energy_curves
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import RangeError
from regime_hjm.linalg_core import quadrature
from regime_hjm.rate_curves import solve_rate_curves


log = logging.getLogger(__name__)

MARKETS = "energy", "rates"


class MarketError(ValueError):
    pass


class DegenerateInterval(DomainError):
    def __init__(self, x1, x2):
        super().__init__(f"delivery period [{x1:g}, {x2:g}] is empty")


class ForwardCurveModel:
    """forward curve g(x, y, z) = c(x, z) + <y, u(x, z)> of one market

    For rates u does not depend on the regime.
    """

    def __init__(self, kind, curves, params):
        if kind not in MARKETS:
            raise MarketError(f"unknown market {kind!r}")
        self.kind = kind
        self.curves = curves
        self.params = params

    @classmethod
    def energy(cls, params, grid):
        return cls("energy", solve_energy_curves(params, grid), params)

    @classmethod
    def rates(cls, params, grid):
        return cls("rates", solve_rate_curves(params, grid), params)

    def __repr__(self):
        return f"<ForwardCurveModel {self.kind} on [0, {self.span:g}]>"

    @property
    def r(self):
        if self.kind != "energy":
            raise MarketError("the rates market has no constant discount rate")
        return self.params.r

    @property
    def span(self):
        return self.curves.grid[-1]

    def require(self, kind):
        if self.kind != kind:
            raise MarketError(f"operation needs a {kind} model, got {self.kind}")

    def loading(self, u, z):
        """u(x, z) as (..., d) from curve values at one or more maturities"""
        if self.kind == "energy":
            return np.moveaxis(u, -1, 0)[z]
        return np.broadcast_to(u, np.shape(z) + u.shape[-1:])

    def with_params(self, params):
        return ForwardCurveModel(self.kind, self.curves, params)

    def with_c_shift(self, regime, delta):
        """copy with c(., regime) shifted by delta, slopes untouched"""
        c = self.curves.c
        shifted = c.values.copy()
        shifted[:, regime] += delta
        curves = self.curves.with_c(c.with_values(shifted, c.slopes))
        return ForwardCurveModel(self.kind, curves, self.params)


def forward_rate(model, x, y, z):
    """c(x, z) + <u(x, z), y>, vectorized over the leading axes of y and z"""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=int)
    u = model.curves.u.at(x)
    c = model.curves.c.at(x)
    return c[z] + np.sum(model.loading(u, z) * y, axis=-1)


def forward_curve(model, y, z):
    """g(x, y, z) on every grid node for a single state"""
    y = np.asarray(y, dtype=float)
    U = model.curves.u.values
    C = model.curves.c.values
    loadings = U[:, :, z] if model.kind == "energy" else U
    return C[:, z] + loadings @ y


def hjm_coefficients(model, x, y, z, sigma, b):
    """HJM drift <u(x, z), b> and volatility u(x, z)^T sigma"""
    u = model.loading(model.curves.u.at(x), z)
    return float(u @ np.asarray(b, dtype=float)), u @ np.asarray(sigma, dtype=float)


def _integrated(model, x1, x2, y, z):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=int)
    U = quadrature(model.curves.u, x1, x2)
    C = quadrature(model.curves.c, x1, x2)
    return C[z] + np.sum(model.loading(U, z) * y, axis=-1)


def bond_price(model, tau, y, z):
    """P = exp(-int_0^tau g(x, y, z) dx)"""
    model.require("rates")
    if tau < 0 or tau > model.span + 1e-12:
        raise RangeError(f"time to maturity {tau} outside [0, {model.span:g}]")
    return np.exp(-_integrated(model, 0.0, tau, y, z))


def zero_yield(model, tau, y, z):
    if not tau > 0:
        raise DomainError(f"zero yield needs tau > 0, got {tau}")
    return -np.log(bond_price(model, tau, y, z)) / tau


def futures_price(model, x1, x2, y, z):
    """average forward price over the delivery period [x1, x2]"""
    model.require("energy")
    if x1 >= x2:
        raise DegenerateInterval(x1, x2)
    if x1 < 0 or x2 > model.span + 1e-12:
        raise RangeError(f"delivery period [{x1:g}, {x2:g}] outside [0, {model.span:g}]")
    return _integrated(model, x1, x2, y, z) / (x2 - x1)


def short_rate(model, y, z):
    model.require("rates")
    return forward_rate(model, 0.0, y, z)
