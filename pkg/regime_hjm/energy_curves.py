"""energy futures curves: the linear system u' = L u, c' = M c + beta_0 . u"""
import logging

import numpy as np

from regime_hjm.linalg_core import DimensionError
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import GridFunction
from regime_hjm.linalg_core import expm
from regime_hjm.linalg_core import rk4_solve
from regime_hjm.regime import validate_generator


log = logging.getLogger(__name__)


class UnsupportedDimension(DomainError):
    def __init__(self, d):
        self.d = d
        super().__init__(f"closed form only exists for d=1, got d={d}")


class EnergyCurveParams:
    """coefficients of the energy curve system

    beta has shape (d+1, n, d): beta[0, z] is the drift constant beta_0(e_z),
    beta[i, z] (i >= 1) the vector multiplying y_i in regime z.
    u0 has shape (d, n) with column z the loading u(0, e_z); c0 has shape (n,).
    """

    def __init__(self, r, Q, beta, u0, c0):
        Q = validate_generator(Q)
        beta = np.array(beta, dtype=float)
        u0 = np.array(u0, dtype=float)
        c0 = np.array(c0, dtype=float)
        n = Q.n
        if beta.ndim != 3 or beta.shape[1] != n or beta.shape[0] != beta.shape[2] + 1:
            raise DimensionError(f"beta must have shape (d+1, {n}, d), got {beta.shape}")
        d = beta.shape[2]
        if u0.shape != (d, n):
            raise DimensionError(f"u0 must have shape ({d}, {n}), got {u0.shape}")
        if c0.shape != (n,):
            raise DimensionError(f"c0 must have {n} entries, got shape {c0.shape}")
        for name, value in ("beta", beta), ("u0", u0), ("c0", c0):
            if not np.isfinite(value).all():
                raise DomainError(f"{name} has non-finite entries")
        if not np.isfinite(r) or r < 0:
            raise DomainError(f"discount rate must be finite and >= 0, got {r}")
        self.r = float(r)
        self.Q = Q
        self.beta = beta
        self.u0 = u0
        self.c0 = c0

    @property
    def n(self):
        return self.Q.n

    @property
    def d(self):
        return self.beta.shape[2]

    def replace(self, **changes):
        kwargs = dict(r=self.r, Q=self.Q, beta=self.beta, u0=self.u0, c0=self.c0)
        kwargs.update(changes)
        return EnergyCurveParams(**kwargs)


class EnergyCurveGrid:
    """solved curves; u and c carry their ODE right-hand sides as slopes"""

    def __init__(self, grid, u, c):
        self.grid = grid
        self.u = u
        self.c = c

    def with_c(self, c):
        return EnergyCurveGrid(self.grid, self.u, c)

    def __repr__(self):
        return f"<EnergyCurveGrid {len(self.grid)} points, u{self.u.values.shape[1:]}>"


def _L(u, p):
    return np.einsum("ijk,...kj->...ij", p.beta[1:], u) - p.r * u + u @ p.Q.q.T


def _M(c, p):
    return c @ p.Q.q.T - p.r * c


def _forcing(u, p):
    return np.einsum("jk,...kj->...j", p.beta[0], u)


def apply_L(u_state, params):
    u = np.asarray(u_state, dtype=float)
    if u.shape != (params.d, params.n):
        raise DimensionError(f"state vector u must have shape ({params.d}, {params.n}), got {u.shape}")
    return _L(u, params)


def apply_M(c_state, params):
    c = np.asarray(c_state, dtype=float)
    if c.shape != (params.n,):
        raise DimensionError(f"state vector c must have {params.n} entries, got shape {c.shape}")
    return _M(c, params)


def solve_energy_curves(params, grid):
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0:
        raise DomainError("curve grid must start at x=0")
    d, n = params.d, params.n
    split = d * n

    def rhs(x, state):
        u = state[:split].reshape(d, n)
        c = state[split:]
        return np.concatenate([_L(u, params).ravel(), _M(c, params) + _forcing(u, params)])

    log.info("solving energy curves: d=%d n=%d on %d grid points", d, n, len(grid))
    state0 = np.concatenate([params.u0.ravel(), params.c0])
    trajectory = rk4_solve(rhs, state0, grid)
    U = trajectory.values[:, :split].reshape(-1, d, n)
    C = trajectory.values[:, split:]
    dU = _L(U, params)
    dC = _M(C, params) + _forcing(U, params)
    return EnergyCurveGrid(grid, GridFunction(grid, U, dU), GridFunction(grid, C, dC))


def _require_scalar_factor(params):
    if params.d != 1:
        raise UnsupportedDimension(params.d)


def closed_form_energy_u(params, x):
    _require_scalar_factor(params)
    B2 = np.diag(params.beta[1, :, 0])
    return expm(x * (B2 - params.r * np.eye(params.n) + params.Q.q)) @ params.u0[0]


def closed_form_energy_c(params, x):
    """c(x) = B_1 B_2^{-1} expm(x(B_2 - r + Q)) c_0 as printed for d=1

    Where beta_1(e_k) = 0 the k-th diagonal entry of B_1 B_2^{-1} is replaced
    by beta_0(e_k). Kept as a diagnostic: it does not solve c' = M c + beta_0 u
    in general.
    """
    _require_scalar_factor(params)
    b1 = params.beta[0, :, 0]
    b2 = params.beta[1, :, 0]
    ratio = np.divide(b1, b2, out=b1.copy(), where=b2 != 0)
    propagator = expm(x * (np.diag(b2) - params.r * np.eye(params.n) + params.Q.q))
    return ratio * (propagator @ params.c0)
