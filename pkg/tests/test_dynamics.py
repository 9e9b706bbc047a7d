import numpy as np
import pytest

from regime_hjm.dynamics import AffineDrift
from regime_hjm.dynamics import AffineSqrtVol
from regime_hjm.dynamics import CovarianceVol
from regime_hjm.dynamics import DiffusionSpec
from regime_hjm.dynamics import ExplicitVol
from regime_hjm.dynamics import RateDrift
from regime_hjm.dynamics import SimulationExplosion
from regime_hjm.dynamics import interpolate_regime
from regime_hjm.dynamics import path_streams
from regime_hjm.dynamics import simulate_paths
from regime_hjm.dynamics import time_grid
from regime_hjm.linalg_core import DimensionError
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import RangeError
from regime_hjm.linalg_core import rk4_solve
from regime_hjm.rate_curves import assemble_drift_diffusion


two_state = [[-1.0, 1.0], [2.0, -2.0]]
still = [[0.0]]


def scalar_spec(kappa, theta, vol, y0=0.2, n=1):
    drift = AffineDrift(np.full((n, 1), kappa * theta), [[-kappa]])
    return DiffusionSpec(drift, vol, [y0], 0)


def cir_spec(kappa=0.5, theta=0.6, vol=0.15, y0=0.2):
    return scalar_spec(kappa, theta, AffineSqrtVol([[0.0]], [[[vol]]], 1), y0)


def test_time_grid():
    np.testing.assert_allclose(time_grid(0.25, 1.0), [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(DomainError):
        time_grid(0.3, 1.0)
    with pytest.raises(DomainError):
        time_grid(0.0, 1.0)


def test_affine_drift_two_regimes(energy_config):
    drift = energy_config.spec.drift
    np.testing.assert_allclose(drift(np.array([0.1, 0.2]), 0), [0.09, 0.2], atol=1e-15)
    np.testing.assert_allclose(drift(np.array([0.1, 0.2]), 1), [0.09, -0.05], atol=1e-15)


def test_rate_drift_agrees_with_assembly(rates_config):
    y = np.array([[0.1, 0.2], [0.5, 0.3]])
    z = np.array([0, 1])
    expected, _ = assemble_drift_diffusion(y, z, rates_config.params)
    np.testing.assert_array_equal(RateDrift(rates_config.params)(y, z), expected)


def test_covariance_vol_squares_to_diffusion(rates_config):
    vol = CovarianceVol(rates_config.params)
    y = np.array([0.3, 0.5])
    sigma = vol(y, 1)
    _, a = assemble_drift_diffusion(y, 1, rates_config.params)
    np.testing.assert_allclose(sigma @ sigma.T, a, atol=1e-15)
    np.testing.assert_array_equal(vol.truncated, [True, True])


def test_affine_sqrt_vol_truncates():
    vol = AffineSqrtVol([[0.1]], [[[0.2]]], 2)
    np.testing.assert_allclose(vol(np.array([[4.0], [-1.0]]), np.array([0, 1])), [[[0.5]], [[0.1]]])
    np.testing.assert_array_equal(vol.truncated, [True])


def test_explicit_vol_per_regime():
    vol = ExplicitVol([[[0.1]], [[0.3]]], 2)
    np.testing.assert_array_equal(vol(np.zeros((2, 1)), np.array([1, 0])), [[[0.3]], [[0.1]]])
    assert not vol.truncated.any()


def test_spec_dimensions():
    with pytest.raises(DimensionError):
        DiffusionSpec(AffineDrift([[0.0]], [[0.0]]), ExplicitVol([[0.0]], 1), [0.0, 1.0], 0)


def test_constant_paths_without_drift_or_vol():
    spec = scalar_spec(0.0, 0.0, ExplicitVol([[0.0]], 2), y0=0.7, n=2)
    for path in simulate_paths(spec, two_state, 0.01, 1.0, 5, seed=3):
        assert (path.y == 0.7).all()
        assert path.times[-1] == pytest.approx(1.0)
        assert len(path.z) == len(path.times)


def test_deterministic_mean_reversion():
    kappa, theta, y0 = 0.8, 0.6, 0.1
    spec = scalar_spec(kappa, theta, ExplicitVol([[0.0]], 1), y0=y0)
    dt = 1e-3
    [path] = simulate_paths(spec, still, dt, 1.0, 1, seed=0)
    ode = rk4_solve(lambda t, y: kappa * (theta - y), y0, np.linspace(0, 1, 101))
    assert abs(path.y[-1, 0] - ode.values[-1]) <= 5 * dt * kappa**2 * abs(theta - y0)
    assert abs(ode.values[-1] - (theta + (y0 - theta) * np.exp(-kappa))) < 1e-9


def cir_mean_error(n_paths, dt, seed):
    kappa, theta, y0 = 0.5, 0.6, 0.2
    paths = simulate_paths(cir_spec(kappa, theta, 0.15, y0), still, dt, 1.0, n_paths, seed)
    ends = np.array([path.y[-1, 0] for path in paths])
    exact = theta + (y0 - theta) * np.exp(-kappa)
    return ends.mean() - exact, ends.std(ddof=1) / np.sqrt(n_paths)


def test_cir_mean():
    error, se = cir_mean_error(4000, 1e-3, seed=5)
    assert abs(error) <= 3 * se


def test_cir_mean_slow():
    error, se = cir_mean_error(100000, 1e-3, seed=6)
    assert abs(error) <= 3 * se


def test_cir_mean_coarse_step_slow():
    error, se = cir_mean_error(100000, 2e-3, seed=6)
    assert abs(error) <= 3 * se


def test_truncation_keeps_paths_finite():
    spec = cir_spec(kappa=0.5, theta=0.05, vol=2.0, y0=0.01)
    paths = simulate_paths(spec, still, 0.01, 2.0, 200, seed=9)
    ys = np.array([path.y for path in paths])
    assert np.isfinite(ys).all()
    assert (ys < 0).any()


def test_same_seed_same_paths():
    spec = cir_spec()
    a = simulate_paths(spec, two_state, 0.01, 1.0, 7, seed=21)
    b = simulate_paths(spec, two_state, 0.01, 1.0, 7, seed=21)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.y, pb.y)
        np.testing.assert_array_equal(pa.z, pb.z)
        np.testing.assert_array_equal(pa.regime_path.jump_times, pb.regime_path.jump_times)


def test_batch_size_does_not_matter():
    spec = cir_spec()
    whole = simulate_paths(spec, two_state, 0.01, 1.0, 10, seed=4)
    pieces = simulate_paths(spec, two_state, 0.01, 1.0, 10, seed=4, batch_size=3)
    for pa, pb in zip(whole, pieces):
        np.testing.assert_array_equal(pa.y, pb.y)
        np.testing.assert_array_equal(pa.z, pb.z)


def test_path_streams_differ_per_path():
    a, _ = path_streams(1, 0)
    b, _ = path_streams(1, 1)
    assert a.random() != b.random()


def test_regime_frozen_per_step(energy_config):
    spec = energy_config.spec
    [path] = simulate_paths(spec, two_state, 0.01, 5.0, 1, seed=8)
    np.testing.assert_array_equal(path.z, path.regime_path.state_at(path.times))


def test_explosion_is_reported():
    spec = DiffusionSpec(AffineDrift([[0.0]], [[1e5]]), ExplicitVol([[0.0]], 1), [1.0], 0)
    with pytest.raises(SimulationExplosion) as excinfo:
        simulate_paths(spec, still, 0.01, 2.0, 2, seed=0)
    assert excinfo.value.path == 0
    assert 0 < excinfo.value.t <= 2.0


def test_bad_simulation_arguments():
    spec = cir_spec()
    with pytest.raises(DomainError):
        simulate_paths(spec, still, 0.3, 1.0, 1, seed=0)
    with pytest.raises(DomainError):
        simulate_paths(spec, still, 0.1, 1.0, 0, seed=0)


def test_interpolate_regime(energy_config):
    [path] = simulate_paths(energy_config.spec, two_state, 0.1, 10.0, 1, seed=2)
    jumps = path.regime_path.jump_times
    states = path.regime_path.states
    assert len(jumps) > 0
    assert interpolate_regime(path, 0.0) == 0
    assert interpolate_regime(path, jumps[0] / 2) == states[0]
    assert interpolate_regime(path, jumps[0]) == states[1]
    assert interpolate_regime(path, 10.0) == states[-1]
    with pytest.raises(RangeError):
        interpolate_regime(path, 10.5)
