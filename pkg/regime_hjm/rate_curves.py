"""interest rate curves: Riccati system for v, then H, w-tilde and c"""
import logging

import numpy as np

from regime_hjm.linalg_core import DimensionError
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import GridFunction
from regime_hjm.linalg_core import IntegrationBlowup
from regime_hjm.linalg_core import NumericsError
from regime_hjm.linalg_core import expm
from regime_hjm.linalg_core import quadrature
from regime_hjm.linalg_core import rk4_solve
from regime_hjm.regime import validate_generator


log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
DEGENERATE_TOL = 1e-12
RICCATI_BOUND = 1e10
MAX_LAMBDA_DEGREE = 4


class RiccatiBlowup(IntegrationBlowup):
    def __init__(self, x):
        super().__init__(x, f"Riccati solution explodes near x={x:.6g}, shorten the curve grid")


class PositivityViolation(NumericsError):
    def __init__(self, x, regime):
        self.x = x
        self.regime = regime
        super().__init__(f"w-tilde left the positive orthant at x={x:.6g} in regime {regime + 1}")


class NoSquareRoot(NumericsError):
    def __init__(self, y, z, eigenvalue):
        self.y = y
        self.z = z
        super().__init__(f"diffusion matrix a(y={np.round(y, 6).tolist()}, z={z + 1}) is not positive semidefinite (eigenvalue {eigenvalue:.3g})")


class InconsistentLambda(DomainError):
    def __init__(self, indices, residuals):
        self.indices = indices
        self.residuals = residuals
        worst = max(residuals[i] for i in indices)
        super().__init__(f"lambda terms {[i + 1 for i in indices]} do not vanish along v (worst residual {worst:.3g})")


def _symmetric(name, a):
    if np.abs(a - np.swapaxes(a, -1, -2)).max(initial=0) > SYMMETRY_TOL * (1 + np.abs(a).max(initial=0)):
        raise DomainError(f"{name} is not symmetric")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


class LambdaTerm:
    """one correction term: Lambda(y, z) (b, a) with Lambda a polynomial in y

    monomials is a K x d array of exponents, coefficients n x K gives the
    weight of each monomial in every regime.
    """

    def __init__(self, b, a, monomials, coefficients):
        self.b = np.array(b, dtype=float)
        d = len(self.b)
        a = np.array(a, dtype=float)
        if a.shape != (d, d):
            raise DimensionError(f"lambda term a must be {d}x{d}, got {a.shape}")
        self.a = _symmetric("lambda term a", a)
        rows = [list(row) for row in monomials]
        if any(len(row) != d for row in rows):
            raise DimensionError(f"lambda monomials need {d} exponents per row")
        self.monomials = np.array(rows, dtype=int).reshape(len(rows), d)
        if (self.monomials < 0).any() or (self.monomials.sum(axis=1) > MAX_LAMBDA_DEGREE).any():
            raise DomainError(f"lambda monomials need non-negative exponents of total degree <= {MAX_LAMBDA_DEGREE}")
        coefficients = np.array(coefficients, dtype=float)
        if coefficients.ndim != 2 or coefficients.shape[1] != len(rows):
            raise DimensionError(f"lambda coefficients must be n x {len(rows)}, got {coefficients.shape}")
        self.coefficients = coefficients

    def __call__(self, y, z):
        y = np.asarray(y, dtype=float)
        powers = np.prod(y[..., None, :] ** self.monomials, axis=-1)
        return np.sum(self.coefficients[z] * powers, axis=-1)


class RateCurveParams:
    """coefficients of the affine rate model

    beta_lin[i] is beta_{i+1} and A_lin[i] is A_{i+1} (regime independent);
    beta0[z] and A0[z] are the constant drift and diffusion terms of regime z.
    """

    def __init__(self, Q, u0, c0, beta_lin, A_lin, beta0, A0, lambda_terms=()):
        Q = validate_generator(Q)
        n = Q.n
        u0 = np.array(u0, dtype=float)
        d = len(u0)
        beta_lin = np.array(beta_lin, dtype=float)
        A_lin = np.array(A_lin, dtype=float)
        beta0 = np.array(beta0, dtype=float)
        A0 = np.array(A0, dtype=float)
        c0 = np.array(c0, dtype=float)
        if beta_lin.ndim == 3 or A_lin.ndim == 4:
            raise DomainError("linear drift and diffusion terms must be regime independent")
        expected = {"u0": (u0, (d,)), "c0": (c0, (n,)), "beta_lin": (beta_lin, (d, d)),
                    "A_lin": (A_lin, (d, d, d)), "beta0": (beta0, (n, d)), "A0": (A0, (n, d, d))}
        for name, (value, shape) in expected.items():
            if value.shape != shape:
                raise DimensionError(f"{name} must have shape {shape}, got {value.shape}")
            if not np.isfinite(value).all():
                raise DomainError(f"{name} has non-finite entries")
        lambda_terms = list(lambda_terms)
        bound = (d + 1) * (d / 2 + 1)
        if len(lambda_terms) > bound:
            raise DomainError(f"at most {bound:g} lambda terms are possible in dimension {d}")
        for term in lambda_terms:
            if len(term.b) != d or term.coefficients.shape[0] != n:
                raise DimensionError("lambda term does not match the model dimensions")
        self.Q = Q
        self.u0 = u0
        self.c0 = c0
        self.beta_lin = beta_lin
        self.A_lin = _symmetric("A_lin", A_lin)
        self.beta0 = beta0
        self.A0 = _symmetric("A0", A0)
        self.lambda_terms = lambda_terms

    @property
    def n(self):
        return self.Q.n

    @property
    def d(self):
        return len(self.u0)

    def replace(self, **changes):
        kwargs = dict(Q=self.Q, u0=self.u0, c0=self.c0, beta_lin=self.beta_lin, A_lin=self.A_lin,
                      beta0=self.beta0, A0=self.A0, lambda_terms=self.lambda_terms)
        kwargs.update(changes)
        return RateCurveParams(**kwargs)


class RateCurveGrid:
    def __init__(self, grid, v, u, H, wtilde, c, lambda_residuals=()):
        self.grid = grid
        self.v = v
        self.u = u
        self.H = H
        self.wtilde = wtilde
        self.c = c
        self.lambda_residuals = list(lambda_residuals)

    def with_c(self, c):
        return RateCurveGrid(self.grid, self.v, self.u, self.H, self.wtilde, c, self.lambda_residuals)

    def __repr__(self):
        return f"<RateCurveGrid {len(self.grid)} points, d={self.v.values.shape[1]}, n={self.c.values.shape[1]}>"


def _riccati(v, p):
    # sum_i <beta_i, v> e_i - 1/2 sum_i <v, A_i v> e_i
    return v @ p.beta_lin.T - 0.5 * np.einsum("...p,ipq,...q->...i", v, p.A_lin, v)


def solve_riccati(params, grid):
    """v' = u0 + sum <beta_i, v> e_i - 1/2 sum <v, A_i v> e_i, v(0) = 0"""
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0:
        raise DomainError("curve grid must start at x=0")
    try:
        v = rk4_solve(lambda x, v: params.u0 + _riccati(v, params), np.zeros(params.d), grid, bound=RICCATI_BOUND)
    except IntegrationBlowup as err:
        log.info("Riccati blowup at x=%.6g", err.x)
        raise RiccatiBlowup(err.x) from err
    V = v.values
    U = params.u0 + _riccati(V, params)
    dU = U @ params.beta_lin.T - np.einsum("...p,ipq,...q->...i", U, params.A_lin, V)
    return GridFunction(grid, V, U), GridFunction(grid, U, dU)


def closed_form_rate_u(params, x):
    beta, A, u0 = _scalar_coefficients(params)
    x = np.asarray(x, dtype=float)
    if A == 0:
        return u0 * np.exp(beta * x)
    disc = beta**2 + 2 * u0 * A
    if abs(disc) <= DEGENERATE_TOL:
        return 4 * u0 / (2 - beta * x) ** 2
    gamma = np.emath.sqrt(disc)
    e = np.exp(gamma * x)
    D = (gamma - beta) * (e - 1) + 2 * gamma
    return np.real(4 * u0 * gamma**2 * e / D**2)


def closed_form_rate_v(params, x):
    """antiderivative of closed_form_rate_u with v(0) = 0"""
    beta, A, u0 = _scalar_coefficients(params)
    x = np.asarray(x, dtype=float)
    if A == 0:
        if beta == 0:
            return u0 * x
        return u0 * np.expm1(beta * x) / beta
    disc = beta**2 + 2 * u0 * A
    if abs(disc) <= DEGENERATE_TOL:
        return 2 * u0 * x / (2 - beta * x)
    gamma = np.emath.sqrt(disc)
    e = np.exp(gamma * x)
    D = (gamma - beta) * (e - 1) + 2 * gamma
    return np.real(2 * u0 * (e - 1) / D)


def _scalar_coefficients(params):
    if params.d != 1:
        raise DomainError(f"closed form only exists for d=1, got d={params.d}")
    return params.beta_lin[0, 0], params.A_lin[0, 0, 0], params.u0[0]


def _h_values(V, beta0, A0):
    return V @ beta0.T - 0.5 * np.einsum("...p,zpq,...q->...z", V, A0, V)


def compute_H(v, beta0, A0):
    """H(x, z) = <v(x), beta_0(z)> - 1/2 <v(x), A_0(z) v(x)>

    Takes a GridFunction (returns one, with dH/dx when v carries u = v' as
    slopes) or plain arrays of v values.
    """
    beta0 = np.asarray(beta0, dtype=float)
    A0 = np.asarray(A0, dtype=float)
    single = beta0.ndim == 1
    if single:
        beta0, A0 = beta0[None], A0[None]
    if not isinstance(v, GridFunction):
        H = _h_values(np.asarray(v, dtype=float), beta0, A0)
        return H[..., 0] if single else H
    V = v.values
    H = _h_values(V, beta0, A0)
    dH = None
    if v.slopes is not None:
        U = v.slopes
        dH = U @ beta0.T - np.einsum("...p,zpq,...q->...z", U, A0, V)
    return GridFunction(v.grid, H, dH)


def solve_wtilde(H, Q, c0, grid):
    """w' = (Q - C_0 - diag H(x)) w, w(0) = 1"""
    Q = validate_generator(Q)
    G0 = Q.q - np.diag(c0)
    coefficient = H.hermite if isinstance(H, GridFunction) else H

    def rhs(x, w):
        return G0 @ w - coefficient(x) * w

    wtilde = rk4_solve(rhs, np.ones(Q.n), grid)
    _check_positive(wtilde)
    return wtilde


def _check_positive(wtilde):
    bad = wtilde.values <= 0
    if bad.any():
        k, regime = np.argwhere(bad)[0]
        raise PositivityViolation(wtilde.grid[k], regime)


def extract_c(wtilde, H, Q, c0):
    """c(x, e_i) = -w'_i / w_i with w' from the ODE right-hand side"""
    Q = validate_generator(Q)
    _check_positive(wtilde)
    G0 = Q.q - np.diag(c0)
    W = wtilde.values
    S = W @ G0.T - H.values * W
    C = -S / W
    dC = None
    if H.slopes is not None:
        dS = S @ G0.T - H.values * S - H.slopes * W
        dC = -dS / W + C**2
    return GridFunction(wtilde.grid, C, dC)


def closed_form_wtilde(H, Q, c0, x):
    """exp(-int_0^x H) expm(x (Q - C_0)) 1 for regime independent H"""
    Q = validate_generator(Q)
    if H.values.ndim > 1:
        if np.abs(H.values - H.values[:, :1]).max() > 0:
            raise DomainError("closed form needs H to be the same in every regime")
        H = H.with_values(H.values[:, 0])
    G0 = Q.q - np.diag(c0)
    return np.exp(-quadrature(H, 0, x)) * (expm(x * G0) @ np.ones(Q.n))


def check_lambda_consistency(v, lambda_terms):
    V = v.values
    residuals = []
    for b, a in _lambda_pairs(lambda_terms):
        res = V @ b - 0.5 * np.einsum("kp,pq,kq->k", V, a, V)
        residuals.append(float(np.abs(res).max()))
    return residuals


def _lambda_pairs(lambda_terms):
    for term in lambda_terms:
        yield (term.b, term.a) if isinstance(term, LambdaTerm) else term


def lambda_coefficients(basis, d):
    """(b, a) pairs from vanishing quadratics q = <l, X> + X^T S X"""
    i, j = np.triu_indices(d)
    pairs = []
    for coefs in basis:
        coefs = np.asarray(coefs, dtype=float)
        S = np.zeros((d, d))
        S[i, j] = coefs[1 + d :]
        S = 0.5 * (S + S.T)
        pairs.append((coefs[1 : 1 + d].copy(), -2 * S))
    return pairs


def lambda_tolerance(v):
    return 1e-6 * (1 + np.max(np.sum(v.values**2, axis=-1)))


def solve_rate_curves(params, grid):
    v, u = solve_riccati(params, grid)
    residuals = check_lambda_consistency(v, params.lambda_terms)
    tol = lambda_tolerance(v)
    bad = [i for i, res in enumerate(residuals) if res > tol]
    if bad:
        raise InconsistentLambda(bad, residuals)
    H = compute_H(v, params.beta0, params.A0)
    wtilde = solve_wtilde(H, params.Q, params.c0, grid)
    c = extract_c(wtilde, H, params.Q, params.c0)
    log.info("rate curves solved on %d points, min w-tilde %.6g", len(grid), wtilde.values.min())
    return RateCurveGrid(np.asarray(grid, dtype=float), v, u, H, wtilde, c, residuals)


def assemble_drift_diffusion(y, z, params, check=True):
    """b(y, z) and a(y, z), vectorized over leading axes of y and z"""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=int)
    b = params.beta0[z] + y @ params.beta_lin
    a = params.A0[z] + np.einsum("...i,ipq->...pq", y, params.A_lin)
    for term in params.lambda_terms:
        lam = term(y, z)
        b = b + lam[..., None] * term.b
        a = a + lam[..., None, None] * term.a
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    if check:
        lowest = np.linalg.eigvalsh(a).min(axis=-1)
        bad = lowest < -SYMMETRY_TOL * (1 + np.abs(a).max(axis=(-1, -2)))
        if bad.any():
            k = np.flatnonzero(bad)[0]
            yb = np.broadcast_to(y, bad.shape + y.shape[-1:]).reshape(-1, y.shape[-1])[k]
            zb = np.broadcast_to(z, bad.shape).reshape(-1)[k]
            raise NoSquareRoot(yb, int(zb), float(lowest.reshape(-1)[k]))
    return b, a
