"""no-arbitrage checks: drift-condition residuals and Monte Carlo martingale tests"""
import logging
import math

import numpy as np
from fields import Tuple
from parse import parse

from regime_hjm.dynamics import AffineDrift
from regime_hjm.dynamics import DEFAULT_BATCH
from regime_hjm.dynamics import simulate_batches
from regime_hjm.dynamics import time_grid
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import quadrature
from regime_hjm.market import MarketError
from regime_hjm.market import bond_price
from regime_hjm.market import futures_price
from regime_hjm.market import short_rate
from regime_hjm.rate_curves import assemble_drift_diffusion


log = logging.getLogger(__name__)

ENERGY_RESIDUAL_TOL = 1e-6
RATES_RESIDUAL_TOL = 1e-5
Z_MAX = 4.0


class ResidualSample(Tuple.x.regime.y.lhs.rhs.residual.scale):
    pass


class ResidualReport:
    """drift-condition residuals at a set of probes

    scale is 1 + |y| for energy models and 1 + |y| + |y|^2 for rates.
    """

    def __init__(self, samples):
        self.samples = list(samples)

    @property
    def sup_residual(self):
        return max((abs(s.residual) for s in self.samples), default=0.0)

    @property
    def sup_scaled(self):
        return max((abs(s.residual) / s.scale for s in self.samples), default=0.0)

    def passes(self, tol):
        return self.sup_scaled <= tol

    def as_dict(self):
        return {
            "sup_residual": self.sup_residual,
            "sup_scaled_residual": self.sup_scaled,
            "n_probes": len(self.samples),
            "samples": [
                {"x": s.x, "regime": s.regime + 1, "y": list(s.y), "lhs": s.lhs, "rhs": s.rhs, "residual": s.residual}
                for s in self.samples
            ],
        }


class Checkpoint(Tuple.t.contract.mean_discounted.std_error.reference.z_stat):
    pass


CHECKPOINT_FIELDS = ("t", "contract", "mean_discounted", "std_error", "reference", "z_stat")


class MartingaleReport:
    def __init__(self, checkpoints, n_paths, dt, seed):
        self.checkpoints = checkpoints
        self.n_paths = n_paths
        self.dt = dt
        self.seed = seed

    @property
    def max_abs_z(self):
        return max((abs(c.z_stat) for c in self.checkpoints), default=0.0)

    def passes(self, z_max=Z_MAX):
        return self.max_abs_z <= z_max

    def as_dict(self):
        return {
            "n_paths": self.n_paths,
            "dt": self.dt,
            "seed": self.seed,
            "max_abs_z": self.max_abs_z,
            "checkpoints": [{k: _plain(getattr(c, k)) for k in CHECKPOINT_FIELDS} for c in self.checkpoints],
        }


def _plain(value):
    return value if isinstance(value, str) else float(value)


def make_probes(model, n_probes=200, x_max=5.0, seed=0, positive=None):
    """(x, y, z) probes: ceil(n_probes / n) draws of (x, y), each at every regime

    x is uniform on [0, min(x_max, span)], y uniform on [-1, 1]^d with the
    components flagged in positive restricted to [0, 1]. Rates models flag the
    factors carrying a square-root diffusion; energy models have no volatility
    of their own, so positive (usually spec.vol.truncated) must be given.
    """
    params = model.params
    n, d = params.n, params.d
    if positive is None:
        if model.kind != "rates":
            raise DomainError("energy probes need the positive-factor flags of the volatility")
        positive = np.abs(params.A_lin).max(axis=(1, 2)) > 0
    positive = np.asarray(positive, dtype=bool)
    if positive.shape != (d,):
        raise DomainError(f"positive must flag each of the {d} factors")
    rng = np.random.default_rng(seed)
    draws = math.ceil(n_probes / n)
    xs = rng.uniform(0, min(x_max, model.span), size=draws)
    ys = rng.uniform(-1, 1, size=(draws, d))
    ys = np.where(positive, np.abs(ys), ys)
    return [(x, y, z) for x, y in zip(xs, ys) for z in range(n)]


def energy_drift_residual(model, probes):
    model.require("energy")
    params = model.params
    q = params.Q.q
    drift = AffineDrift.from_energy(params)
    samples = []
    for x, y, z in probes:
        y = np.asarray(y, dtype=float)
        u = model.curves.u.at(x)
        du = model.curves.u.slope_at(x)
        c = model.curves.c.at(x)
        dc = model.curves.c.slope_at(x)
        lhs = u[:, z] @ drift(y, z)
        jumps = ((y @ (u - u[:, [z]])) + (c - c[z])) @ q[z]
        rhs = dc[z] + du[:, z] @ y + params.r * (u[:, z] @ y + c[z]) - jumps
        samples.append(ResidualSample(x, z, y, lhs, rhs, lhs - rhs, 1 + np.linalg.norm(y)))
    return ResidualReport(samples)


def rate_drift_residual(model, probes):
    model.require("rates")
    params = model.params
    q = params.Q.q
    samples = []
    for x, y, z in probes:
        y = np.asarray(y, dtype=float)
        u = model.curves.u.at(x)
        du = model.curves.u.slope_at(x)
        dc = model.curves.c.slope_at(x)
        c = model.curves.c.at(x)
        v = quadrature(model.curves.u, 0.0, x)
        w = quadrature(model.curves.c, 0.0, x)
        b, a = assemble_drift_diffusion(y, z, params)
        lhs = u @ b
        compensation = ((c - c[z]) * np.exp(w[z] - w)) @ q[z]
        rhs = du @ y + dc[z] + u @ a @ v - compensation
        norm = np.linalg.norm(y)
        samples.append(ResidualSample(x, z, y, lhs, rhs, lhs - rhs, 1 + norm + norm**2))
    return ResidualReport(samples)


def drift_residual(model, probes):
    if model.kind == "energy":
        return energy_drift_residual(model, probes)
    return rate_drift_residual(model, probes)


def parse_contract(contract):
    """'F[T1,T2]' (futures delivering over [T1, T2]) or 'P[T]' (zero bond)"""
    result = parse("F[{:g},{:g}]", contract)
    if result is not None:
        t1, t2 = result.fixed
        if not 0 <= t1 < t2:
            raise DomainError(f"contract {contract}: need 0 <= T1 < T2")
        return "futures", (t1, t2)
    result = parse("P[{:g}]", contract)
    if result is not None:
        (t,) = result.fixed
        if t < 0:
            raise DomainError(f"contract {contract}: maturity must be >= 0")
        return "bond", (t,)
    raise DomainError(f"unknown contract {contract!r}, expected F[T1,T2] or P[T]")


def _pricer(model, contract):
    kind, maturities = parse_contract(contract)
    if kind == "futures":
        model.require("energy")
        t1, t2 = maturities
        return t1, lambda t, y, z: futures_price(model, t1 - t, t2 - t, y, z)
    if model.kind != "rates":
        raise MarketError(f"bond contract {contract} needs a rates model")
    (T,) = maturities
    return T, lambda t, y, z: bond_price(model, T - t, y, z)


def martingale_test(model, spec, contracts, checkpoints, n_paths, dt, seed,
                    batch_size=DEFAULT_BATCH, se_floor=1e-6):
    """sample means of discounted prices at the checkpoints against time-0 prices"""
    Q = model.params.Q
    pricers = [(c,) + _pricer(model, c) for c in contracts]
    checkpoints = sorted(float(t) for t in checkpoints)
    if not checkpoints or checkpoints[0] < 0:
        raise DomainError("checkpoints must be non-negative")
    maturity = min(m for _, m, _ in pricers)
    if checkpoints[-1] > maturity:
        raise DomainError(f"checkpoint {checkpoints[-1]} is past the earliest maturity {maturity}")
    times = time_grid(dt, checkpoints[-1])
    index = [int(round(t / dt)) for t in checkpoints]
    for t, k in zip(checkpoints, index):
        if abs(times[k] - t) > 1e-9:
            raise DomainError(f"checkpoint {t} is not on the simulation grid (dt={dt})")

    reference = [float(price(0.0, spec.y0, spec.z0)) for _, _, price in pricers]
    total = np.zeros((len(checkpoints), len(pricers)))
    total_sq = np.zeros_like(total)
    for _, times, y, z, _ in simulate_batches(spec, Q, dt, checkpoints[-1], n_paths, seed, batch_size):
        if model.kind == "rates":
            rates = short_rate(model, y[:, :-1], z[:, :-1])
            integral = np.concatenate([np.zeros((len(y), 1)), np.cumsum(rates * dt, axis=1)], axis=1)
        for i, (t, k) in enumerate(zip(checkpoints, index)):
            if model.kind == "rates":
                discount = np.exp(-integral[:, k])
            else:
                discount = np.exp(-model.r * t)
            for j, (_, _, price) in enumerate(pricers):
                diff = discount * price(t, y[:, k], z[:, k]) - reference[j]
                total[i, j] += diff.sum()
                total_sq[i, j] += (diff**2).sum()

    report = []
    for i, t in enumerate(checkpoints):
        for j, (contract, _, _) in enumerate(pricers):
            bias = total[i, j] / n_paths
            var = max(total_sq[i, j] / n_paths - bias**2, 0.0) * n_paths / max(n_paths - 1, 1)
            se = max(math.sqrt(var / n_paths), se_floor * (1 + abs(reference[j])))
            point = Checkpoint(t, contract, reference[j] + bias, se, reference[j], bias / se)
            log.info("martingale %s at t=%g: mean %.8g ref %.8g z %.3f", contract, t, point.mean_discounted, reference[j], point.z_stat)
            report.append(point)
    return MartingaleReport(report, n_paths, dt, seed)
