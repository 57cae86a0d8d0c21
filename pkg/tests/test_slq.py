import numpy as np
import pytest

from hessurgery.operators import SpikedOperatorSpec, dense_oracle, spiked_operator
from hessurgery.slq import (
    DEFAULT_PRESET, auto_grid, gaussian_kernel, l1_distance, probe_convergence, probe_quadrature, slq_density,
)
from hessurgery.vecspace import Rng, dense_eigh


def wigner(n=100, seed=3):
    G = Rng(seed).normal(n * n).reshape(n, n)
    return (G + G.T) / np.sqrt(2 * n)


def exact_smoothed(M, sigma2, grid):
    vals = dense_eigh(M)[0]
    return gaussian_kernel(grid, vals, sigma2).mean(axis=1)


def test_default_preset():
    assert DEFAULT_PRESET == {"m": 90, "k": 10, "sigma2": 1e-5}


def test_scaled_identity_single_bump():
    est = slq_density(dense_oracle(2.5 * np.eye(30)), m=10, k=4, sigma2=0.01, seed=1)
    for pq in est.probes:
        assert abs(pq.weights.sum() / pq.probe_norm2 - 1) <= 1e-10
    assert est.grid[np.argmax(est.density)] == pytest.approx(2.5, abs=est.grid[1] - est.grid[0])
    assert est.integral() == pytest.approx(1.0, abs=1e-3)


def test_dense_oracle_l1():
    M = wigner()
    sigma2 = 0.05
    grid = np.linspace(-2.5, 2.5, 4001)
    est = slq_density(dense_oracle(M), m=100, k=30, sigma2=sigma2, grid=grid, seed=0)
    assert l1_distance(est.density, exact_smoothed(M, sigma2, grid), grid) <= 0.05
    assert abs(est.integral() - 1) <= 1e-3
    assert np.all(est.density >= 0)


def test_spiked_morphology():
    spikes = (40.0, 25.0, 12.0)
    op = spiked_operator(SpikedOperatorSpec(200, spikes, 0.5, seed=2))
    sigma2 = 0.05
    grid = np.linspace(-2, 45, 20000)
    est = slq_density(op.oracle, m=60, k=40, sigma2=sigma2, grid=grid, seed=3)
    width = np.sqrt(sigma2)
    for lam in spikes:
        win = np.abs(grid - lam) <= 5 * width
        peak = grid[win][np.argmax(est.density[win])]
        assert abs(peak - lam) <= 2 * width
        mass = np.trapezoid(est.density[win], grid[win])
        assert 0.5 / 200 <= mass <= 2 / 200
    bulk = grid <= 0.5 + 5 * width
    assert np.trapezoid(est.density[bulk], grid[bulk]) >= 0.95
    # local maxima above the bulk equal the planted spike count
    d = est.density
    above = grid > 0.5 + 10 * width
    peaks = (d[1:-1] > d[:-2]) & (d[1:-1] > d[2:]) & (d[1:-1] > 1e-6) & above[1:-1]
    assert int(peaks.sum()) == len(spikes)


def test_quadrature_weights_sum_to_probe_norm():
    o = dense_oracle(wigner(60, 1))
    for i in range(10):
        pq = probe_quadrature(o, 20, seed=5, index=i)
        assert np.all(pq.weights >= 0)
        assert abs(pq.weights.sum() - pq.probe_norm2) <= 1e-10 * pq.probe_norm2


@pytest.mark.parametrize("sigma2", [1e-5, 1e-3, 1e-1])
def test_mass_conservation(sigma2):
    o = dense_oracle(wigner(60, 2))
    probes = slq_density(o, m=30, k=5, sigma2=sigma2, seed=0).probes
    nodes = np.concatenate([p.nodes for p in probes])
    step = np.sqrt(sigma2) / 10
    grid = np.arange(nodes.min() - 5 * np.sqrt(sigma2), nodes.max() + 5 * np.sqrt(sigma2) + step, step)
    est = slq_density(o, m=30, k=5, sigma2=sigma2, grid=grid, seed=0)
    assert abs(est.integral() - 1) <= 1e-3


def test_deterministic_and_errors():
    o = dense_oracle(wigner(40, 3))
    a = slq_density(o, 10, 1, 0.01, seed=4)
    b = slq_density(o, 10, 1, 0.01, seed=4)
    assert a.density.tobytes() == b.density.tobytes()
    with pytest.raises(ValueError):
        slq_density(o, 10, 0, 0.01)
    with pytest.raises(ValueError):
        slq_density(o, 10, 1, 0.0)
    with pytest.raises(ValueError):
        slq_density(o, 10, 1, 0.01, grid=[1.0, 0.0])


def test_auto_grid_covers_nodes():
    g = auto_grid([1.0, 3.0], 0.04, n=11)
    assert g[0] == pytest.approx(0.0) and g[-1] == pytest.approx(4.0)


def test_probe_convergence_slope():
    o = dense_oracle(wigner())
    grid = np.linspace(-2.5, 2.5, 2001)
    tab = probe_convergence(o, 30, 0.02, grid, [1, 2, 4, 8, 16, 32, 64], seed=0)
    assert tab.k_ref == 640
    assert -0.7 <= tab.slope <= -0.3


def test_probe_convergence_reference_distance_zero():
    o = dense_oracle(wigner(30, 4))
    grid = np.linspace(-3, 3, 501)
    tab = probe_convergence(o, 10, 0.05, grid, [1, 4, 8], k_ref=8)
    assert tab.l1[-1] == 0.0
    with pytest.raises(ValueError):
        probe_convergence(o, 10, 0.05, grid, [4, 2])
