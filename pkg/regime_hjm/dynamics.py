"""Euler-Maruyama simulation of the factor process Y driven by the regime chain Z"""
import logging

import numpy as np
from fields import Tuple

from regime_hjm.linalg_core import DimensionError
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import NumericsError
from regime_hjm.linalg_core import per_regime
from regime_hjm.linalg_core import psd_sqrt
from regime_hjm.rate_curves import assemble_drift_diffusion
from regime_hjm.regime import sample_regime_path
from regime_hjm.regime import validate_generator


log = logging.getLogger(__name__)

DEFAULT_BATCH = 2048


class SimulationExplosion(NumericsError):
    def __init__(self, path, t):
        self.path = path
        self.t = t
        super().__init__(f"path {path} left the finite range at t={t:.6g}")


class AffineDrift:
    """b(y, z) = beta_0(z) + sum_i y_i beta_i(z)"""

    def __init__(self, beta0, beta_lin):
        self.beta0 = np.array(beta0, dtype=float)
        n, d = self.beta0.shape
        self.beta_lin = per_regime(beta_lin, n, (d, d))

    @classmethod
    def from_energy(cls, params):
        return cls(params.beta[0], params.beta[1:].transpose(1, 0, 2))

    def __call__(self, y, z):
        return self.beta0[z] + np.einsum("...i,...ik->...k", y, self.beta_lin[z])


class RateDrift:
    def __init__(self, params):
        self.params = params

    def __call__(self, y, z):
        return assemble_drift_diffusion(y, z, self.params, check=False)[0]


class ExplicitVol:
    def __init__(self, sigma, n):
        sigma = np.array(sigma, dtype=float)
        d = sigma.shape[-1]
        self.sigma = per_regime(sigma, n, (d, d))
        self.truncated = np.zeros(d, dtype=bool)

    def __call__(self, y, z):
        return self.sigma[z]


class AffineSqrtVol:
    """sigma(y, z) = sigma_0(z) + sum_i sigma_i(z) sqrt(max(y_i, 0))"""

    def __init__(self, sigma0, sigma_sqrt, n):
        sigma0 = np.array(sigma0, dtype=float)
        d = sigma0.shape[-1]
        self.sigma0 = per_regime(sigma0, n, (d, d))
        self.sigma_sqrt = per_regime(sigma_sqrt, n, (d, d, d))
        self.truncated = np.abs(self.sigma_sqrt).max(axis=(0, 2, 3)) > 0

    def __call__(self, y, z):
        root = np.sqrt(np.maximum(y, 0))
        return self.sigma0[z] + np.einsum("...i,...ipq->...pq", root, self.sigma_sqrt[z])


class CovarianceVol:
    """symmetric square root of the assembled a(y, z)"""

    def __init__(self, params):
        self.params = params
        self.truncated = np.abs(params.A_lin).max(axis=(1, 2)) > 0

    def __call__(self, y, z):
        return psd_sqrt(assemble_drift_diffusion(y, z, self.params)[1])


class DiffusionSpec:
    def __init__(self, drift, vol, y0, z0):
        self.drift = drift
        self.vol = vol
        self.y0 = np.array(y0, dtype=float)
        self.z0 = int(z0)
        if len(self.vol.truncated) != len(self.y0):
            raise DimensionError(f"volatility acts on {len(self.vol.truncated)} factors, y0 has {len(self.y0)}")

    @property
    def d(self):
        return len(self.y0)


class PathSample(Tuple.times.y.z.regime_path):
    pass


def path_streams(seed, path_id):
    """independent (regime, noise) generators for one path"""
    regime, noise = np.random.SeedSequence(seed, spawn_key=(int(path_id),)).spawn(2)
    return np.random.default_rng(regime), np.random.default_rng(noise)


def time_grid(dt, horizon):
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")
    steps = int(round(horizon / dt))
    if steps < 1 or abs(steps * dt - horizon) > 1e-9:
        raise DomainError(f"horizon {horizon} is not a multiple of dt={dt}")
    return dt * np.arange(steps + 1)


def _euler(spec, Q, times, path_ids, seed):
    dt = times[1] - times[0]
    steps = len(times) - 1
    batch = len(path_ids)
    z = np.empty((batch, steps + 1), dtype=int)
    dW = np.empty((batch, steps, spec.d))
    regime_paths = []
    for b, path_id in enumerate(path_ids):
        regime_rng, noise_rng = path_streams(seed, path_id)
        regime_path = sample_regime_path(Q, spec.z0, times[-1], regime_rng)
        regime_paths.append(regime_path)
        z[b] = regime_path.state_at(times)
        dW[b] = noise_rng.standard_normal((steps, spec.d)) * np.sqrt(dt)
    y = np.empty((batch, steps + 1, spec.d))
    y[:, 0] = spec.y0
    truncated = spec.vol.truncated
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            yk = y[:, k]
            yt = np.where(truncated, np.maximum(yk, 0), yk)
            zk = z[:, k]
            step = spec.drift(yt, zk) * dt + np.einsum("bpq,bq->bp", spec.vol(yt, zk), dW[:, k])
            y[:, k + 1] = yk + step
            finite = np.isfinite(y[:, k + 1]).all(axis=1)
            if not finite.all():
                raise SimulationExplosion(int(path_ids[np.argmin(finite)]), times[k + 1])
    return y, z, regime_paths


def simulate_batches(spec, Q, dt, horizon, n_paths, seed, batch_size=DEFAULT_BATCH):
    """yield (path_ids, times, y, z, regime_paths) batch by batch

    path k always draws from the streams keyed by (seed, k), so the output is
    the same for every batch size.
    """
    Q = validate_generator(Q)
    times = time_grid(dt, horizon)
    if n_paths < 1:
        raise DomainError(f"need at least one path, got {n_paths}")
    if not 0 <= spec.z0 < Q.n:
        raise DomainError(f"initial regime {spec.z0} outside 0..{Q.n - 1}")
    for start in range(0, n_paths, batch_size):
        path_ids = np.arange(start, min(start + batch_size, n_paths))
        log.debug("simulating paths %d..%d on %d steps", path_ids[0], path_ids[-1], len(times) - 1)
        y, z, regime_paths = _euler(spec, Q, times, path_ids, seed)
        yield path_ids, times, y, z, regime_paths


def simulate_paths(spec, Q, dt, horizon, n_paths, seed, batch_size=DEFAULT_BATCH):
    paths = []
    for _, times, y, z, regime_paths in simulate_batches(spec, Q, dt, horizon, n_paths, seed, batch_size):
        paths.extend(PathSample(times, y[b], z[b], rp) for b, rp in enumerate(regime_paths))
    return paths


def interpolate_regime(path, t):
    return int(path.regime_path.state_at(t))
