import logging

import numpy as np
import scipy.linalg
import sympy
from numpy.polynomial import polynomial as P
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline


log = logging.getLogger(__name__)


class NumericsError(Exception):
    pass


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class RangeError(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class IntegrationBlowup(NumericsError):
    def __init__(self, x, msg=None):
        self.x = x
        super().__init__(msg or f"integration blew up at x={x:.6g}")


def expm(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise DomainError("expm got non-finite entries")
    return scipy.linalg.expm(m)


def psd_sqrt(a, tol=1e-12):
    """symmetric square root of a (batch of) positive semidefinite matrices"""
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    w, v = np.linalg.eigh(a)
    scale = 1 + np.abs(a).max(initial=0)
    if (w < -tol * scale).any():
        raise DomainError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3g})")
    root = np.sqrt(np.clip(w, 0, None))
    return np.einsum("...ik,...k,...jk->...ij", v, root, v)


def make_grid(x_max=10.0, x_step=1e-3):
    """uniform maturity grid 0 = x_0 < ... < x_m = x_max"""
    if not x_max > 0 or not x_step > 0:
        raise DomainError("grid needs x_max > 0 and x_step > 0")
    m = int(round(x_max / x_step))
    if m < 1 or abs(m * x_step - x_max) > 1e-9 * max(1, x_max):
        raise DomainError(f"x_max={x_max} is not a multiple of x_step={x_step}")
    return np.linspace(0.0, x_max, m + 1)


def per_regime(value, n, tail, name="value"):
    """broadcast a regime-independent block to one copy per regime"""
    value = np.array(value, dtype=float)
    if value.shape == tail:
        value = np.broadcast_to(value, (n,) + tail).copy()
    if value.shape != (n,) + tail:
        raise DimensionError(f"{name} must have shape {tail} or {(n,) + tail}, got {value.shape}")
    return value


def refine(grid):
    """grid with every cell halved"""
    mid = 0.5 * (grid[:-1] + grid[1:])
    out = np.empty(2 * len(grid) - 1)
    out[::2] = grid
    out[1::2] = mid
    return out


class GridFunction:
    """values (and optionally derivatives) tabulated on an increasing grid

    The first axis of values/slopes runs along the grid; the remaining axes
    are the shape of one sample (a vector, a d x n state matrix, ...).
    """

    def __init__(self, grid, values, slopes=None):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or len(grid) < 2:
            raise DimensionError("a grid needs at least two points")
        if not (np.diff(grid) > 0).all():
            raise DomainError("grid must be strictly increasing")
        if len(values) != len(grid):
            raise DimensionError(f"{len(values)} values for {len(grid)} grid points")
        if slopes is not None:
            slopes = np.asarray(slopes, dtype=float)
            if slopes.shape != values.shape:
                raise DimensionError("slopes and values differ in shape")
        self.grid = grid
        self.values = values
        self.slopes = slopes
        self._spline = None

    def __len__(self):
        return len(self.grid)

    def __repr__(self):
        lo, hi = self.span
        return f"<GridFunction {len(self)} points on [{lo:g}, {hi:g}], shape {self.values.shape[1:]}>"

    @property
    def span(self):
        return self.grid[0], self.grid[-1]

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.span
        eps = 1e-12 * (1 + abs(hi))
        if (x < lo - eps).any() or (x > hi + eps).any():
            raise RangeError(f"x={x} outside grid span [{lo:g}, {hi:g}]")
        x = np.clip(x, lo, hi)
        i = np.searchsorted(self.grid, x, side="right") - 1
        i = np.clip(i, 0, len(self.grid) - 2)
        w = (x - self.grid[i]) / (self.grid[i + 1] - self.grid[i])
        return i, w

    def _linear(self, table, x):
        i, w = self._locate(x)
        w = w.reshape(w.shape + (1,) * (table.ndim - 1))
        return table[i] * (1 - w) + table[i + 1] * w

    def at(self, x):
        """linear interpolation between nodes (exact on nodes)"""
        return self._linear(self.values, x)

    def slope_at(self, x):
        if self.slopes is None:
            raise DomainError("no slopes stored on this grid function")
        return self._linear(self.slopes, x)

    def hermite(self, x):
        """cubic Hermite interpolation from the stored slopes, O(h^4)"""
        if self.slopes is None:
            return self.at(x)
        self._locate(x)
        if self._spline is None:
            self._spline = CubicHermiteSpline(self.grid, self.values, self.slopes, axis=0)
        return self._spline(x)

    def with_values(self, values, slopes=None):
        return GridFunction(self.grid, values, slopes=slopes)


def rk4_solve(rhs, y0, grid, bound=None):
    """classical Runge-Kutta on the given grid, rhs(x, y) -> dy/dx

    y may have any array shape. Raises IntegrationBlowup with the first grid
    point where the state stops being finite (or exceeds bound in magnitude).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or not (np.diff(grid) > 0).all():
        raise DomainError("rk4_solve needs a strictly increasing grid")
    y = np.array(y0, dtype=float)
    out = np.empty((len(grid),) + y.shape)
    out[0] = y
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(len(grid) - 1):
            x = grid[k]
            h = grid[k + 1] - x
            k1 = rhs(x, y)
            k2 = rhs(x + h / 2, y + h / 2 * k1)
            k3 = rhs(x + h / 2, y + h / 2 * k2)
            k4 = rhs(x + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.isfinite(y).all() or (bound is not None and np.abs(y).max() > bound):
                log.info("rk4 trajectory left the finite range at x=%.6g", grid[k + 1])
                raise IntegrationBlowup(grid[k + 1])
            out[k + 1] = y
    return GridFunction(grid, out)


def _pair_start(k, n):
    # cell k uses the quadratic on its even-anchored node pair; a trailing odd cell borrows the last pair
    if n == 2:
        return 0
    return min(2 * (k // 2), n - 3)


def _cell_integral(f, k, lo, hi):
    # exact integral over [lo, hi] (inside cell k) of the interpolant owning cell k
    g = f.grid
    j = _pair_start(k, len(g))
    nodes = g[j : j + min(3, len(g))]
    centre = nodes[len(nodes) // 2]
    t = nodes - centre
    weights = []
    for i in range(len(t)):
        others = np.delete(t, i)
        basis = P.polyfromroots(others) / np.prod(t[i] - others)
        anti = P.polyint(basis)
        weights.append(P.polyval(hi - centre, anti) - P.polyval(lo - centre, anti))
    return np.tensordot(np.array(weights), f.values[j : j + len(nodes)], axes=1)


def quadrature(f, a, b):
    """integral over [a, b] of the piecewise quadratic through even-anchored node pairs

    Whole pairs reduce to composite Simpson; splitting at a node is additive.
    """
    lo, hi = f.span
    eps = 1e-12 * (1 + abs(hi))
    if a > b:
        raise DomainError(f"quadrature bounds reversed: a={a} > b={b}")
    if a < lo - eps or b > hi + eps:
        raise RangeError(f"[{a}, {b}] outside grid span [{lo:g}, {hi:g}]")
    g = f.grid
    a, b = max(a, lo), min(b, hi)
    # snap bounds sitting on a node
    ia = np.searchsorted(g, a - eps)
    if ia < len(g) and abs(g[ia] - a) <= eps:
        a = g[ia]
    ib = np.searchsorted(g, b + eps, side="right") - 1
    if ib >= 0 and abs(g[ib] - b) <= eps:
        b = g[ib]
    if a == b:
        return np.zeros(f.values.shape[1:])
    i0 = np.searchsorted(g, a)
    i1 = np.searchsorted(g, b, side="right") - 1
    if i0 > i1:
        # both bounds inside one cell
        return _cell_integral(f, i1, a, b)
    total = np.zeros(f.values.shape[1:])
    if a < g[i0]:
        total = total + _cell_integral(f, i0 - 1, a, g[i0])
    p0 = i0 + i0 % 2
    p1 = i1 - i1 % 2
    for k in range(i0, min(p0, i1)):
        total = total + _cell_integral(f, k, g[k], g[k + 1])
    if p1 > p0:
        total = total + simpson(f.values[p0 : p1 + 1], x=g[p0 : p1 + 1], axis=0)
    for k in range(max(p0, p1), i1):
        total = total + _cell_integral(f, k, g[k], g[k + 1])
    if b > g[i1]:
        total = total + _cell_integral(f, i1, g[i1], b)
    return total


def quadratic_monomials(points):
    """design matrix with columns 1, y_1..y_d, y_i*y_j (i <= j)"""
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    i, j = np.triu_indices(p.shape[1])
    return np.hstack([np.ones((len(p), 1)), p, p[:, i] * p[:, j]])


def vanishing_quadratics(points, tol=1e-8):
    """orthonormal coefficient vectors of the quadratics vanishing on the points

    Coefficients follow the column order of quadratic_monomials. The basis is
    the numerical nullspace of the design matrix: singular values below
    tol * sigma_max count as zero.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if len(p) < 2:
        raise InsufficientData(f"need at least 2 points, got {len(p)}")
    if not np.isfinite(p).all():
        raise DomainError("points must be finite")
    basis = scipy.linalg.null_space(quadratic_monomials(p), rcond=tol)
    log.debug("vanishing quadratics: %d points in dimension %d -> %d", len(p), p.shape[1], basis.shape[1])
    return list(basis.T)


def quadratic_expressions(basis, d):
    """sympy polynomials in X1..Xd, scaled so the largest coefficient is 1"""
    xs = sympy.symbols(f"X1:{d + 1}")
    i, j = np.triu_indices(d)
    monomials = [sympy.Integer(1), *xs, *(xs[a] * xs[b] for a, b in zip(i, j))]
    exprs = []
    for coefs in basis:
        coefs = np.asarray(coefs, dtype=float)
        coefs = coefs / coefs[np.argmax(np.abs(coefs))]
        terms = [sympy.Float(round(c, 10)) * m for c, m in zip(coefs, monomials) if abs(c) > 1e-10]
        exprs.append(sympy.Add(*terms))
    return exprs
