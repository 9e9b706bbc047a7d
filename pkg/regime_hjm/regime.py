"""finite-state continuous-time Markov chain driving the regime switches"""
import logging

import numpy as np
import scipy.linalg
from fields import Tuple

from regime_hjm.linalg_core import DimensionError
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import RangeError
from regime_hjm.linalg_core import expm


log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


class GeneratorError(ValueError):
    pass


class InvalidIntensity(GeneratorError):
    def __init__(self, row, col, value):
        self.row = row
        self.col = col
        super().__init__(f"negative switching intensity {value:g} at row {row + 1}, column {col + 1}")


class NotConservative(GeneratorError):
    def __init__(self, row, total):
        self.row = row
        self.total = total
        super().__init__(f"row {row + 1} of the generator sums to {total:g} instead of 0")


class GeneratorMatrix:
    """intensity matrix Q of the regime chain (1/years)

    q[i, j] (i != j) is the rate of switching from regime i to regime j,
    -q[i, i] the total rate of leaving regime i.
    """

    def __init__(self, q):
        self.q = q
        self.q.flags.writeable = False

    @property
    def n(self):
        return len(self.q)

    def exit_rate(self, i):
        return -self.q[i, i]

    def jump_law(self, i):
        """distribution of the regime entered when leaving regime i"""
        rate = self.exit_rate(i)
        p = np.where(np.arange(self.n) == i, 0.0, self.q[i])
        return p / rate if rate > 0 else p

    def __repr__(self):
        return f"GeneratorMatrix({self.q.tolist()})"


def validate_generator(q):
    if isinstance(q, GeneratorMatrix):
        return q
    q = np.array(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.size == 0:
        raise DimensionError(f"generator must be a non-empty square matrix, got shape {q.shape}")
    if not np.isfinite(q).all():
        raise DomainError("generator has non-finite entries")
    off = ~np.eye(len(q), dtype=bool)
    for i, j in zip(*np.nonzero(off & (q < 0))):
        raise InvalidIntensity(i, j, q[i, j])
    for i, total in enumerate(q.sum(axis=1)):
        if abs(total) > ROW_SUM_TOL:
            raise NotConservative(i, total)
    return GeneratorMatrix(q)


def transition_probabilities(Q, t):
    Q = validate_generator(Q)
    if t < 0:
        raise DomainError(f"transition time must be >= 0, got {t}")
    return expm(t * Q.q)


def stationary_distribution(Q):
    """pi with pi Q = 0 and sum(pi) = 1"""
    Q = validate_generator(Q)
    kernel = scipy.linalg.null_space(Q.q.T)
    if kernel.shape[1] != 1:
        raise DomainError(f"stationary distribution is not unique ({kernel.shape[1]} closed classes)")
    pi = kernel[:, 0]
    return np.abs(pi / pi.sum())


class RegimePath(Tuple.jump_times.states.horizon):
    """piecewise constant regime trajectory on [0, horizon]

    states has one more entry than jump_times: the state before the first
    jump, then the state entered at each jump.
    """

    def state_at(self, t):
        """right-continuous regime value at t (scalar or array)"""
        t = np.asarray(t, dtype=float)
        if (t < 0).any() or (t > self.horizon + 1e-12).any():
            raise RangeError(f"t={t} outside [0, {self.horizon:g}]")
        return self.states[np.searchsorted(self.jump_times, t, side="right")]


def sample_regime_path(Q, z0, horizon, rng):
    """Gillespie sampling: exponential holding times, then the jump law"""
    Q = validate_generator(Q)
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if not 0 <= z0 < Q.n:
        raise DomainError(f"initial regime {z0} outside 0..{Q.n - 1}")
    t = 0.0
    z = int(z0)
    times = []
    states = [z]
    while True:
        rate = Q.exit_rate(z)
        if rate <= 0:
            break
        t += -np.log1p(-rng.random()) / rate
        if t > horizon:
            break
        cum = np.cumsum(Q.jump_law(z))
        z = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        times.append(t)
        states.append(z)
    return RegimePath(np.array(times), np.array(states, dtype=int), float(horizon))
