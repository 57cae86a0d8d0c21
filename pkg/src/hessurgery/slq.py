"""Stochastic Lanczos quadrature estimates of the spectral density."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .lanczos import lanczos
from .operators import HvpOracle
from .vecspace import Rng, derive_seed, tridiag_eigh

DEFAULT_PRESET = {"m": 90, "k": 10, "sigma2": 1e-5}


@dataclass
class ProbeQuadrature:
    nodes: np.ndarray
    weights: np.ndarray  # |v|^2 * U[0, i]^2, sums to |v|^2
    probe_norm2: float


@dataclass
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    sigma2: float
    k: int
    m: int
    probes: list[ProbeQuadrature] = field(default_factory=list, repr=False)

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def gaussian_kernel(t: np.ndarray, nodes: np.ndarray, sigma2: float) -> np.ndarray:
    """``f_sigma(node; t)`` for every (t, node) pair, shape (len(t), len(nodes))."""
    diff = t[:, None] - nodes[None, :]
    return np.exp(-diff * diff / (2.0 * sigma2)) / math.sqrt(2.0 * math.pi * sigma2)


def auto_grid(values: Any, sigma2: float, n: int = 2000, per_node: int = 41) -> np.ndarray:
    """Uniform grid over the node range, refined to ``sigma/4`` spacing within 5 sigma of every node.

    A narrow kernel on a wide spectrum would otherwise fall between grid
    points and the trapezoid mass would drift away from 1.
    """
    v = np.unique(np.asarray(values, dtype=np.float64))
    s = math.sqrt(sigma2)
    pad = 5.0 * s
    parts = [np.linspace(v.min() - pad, v.max() + pad, n)]
    if per_node > 1:
        offsets = np.linspace(-pad, pad, per_node)
        parts.append((v[:, None] + offsets[None, :]).ravel())
    return np.unique(np.concatenate(parts))


def probe_quadrature(oracle: HvpOracle, m: int, seed: int, index: int) -> ProbeQuadrature:
    v = Rng(derive_seed(seed, "probe", index)).normal(oracle.dim) / math.sqrt(oracle.dim)
    n2 = float(v @ v)
    res = lanczos(oracle, v / math.sqrt(n2), m)
    nodes, first = tridiag_eigh(res.T, rows=[0])
    return ProbeQuadrature(nodes, n2 * first[0] ** 2, n2)


def _check_grid(grid: Any) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
        raise ValueError("grid must be a strictly increasing 1-d array with at least 2 points")
    return g


def density_from_probes(probes: Sequence[ProbeQuadrature], sigma2: float, grid: np.ndarray) -> np.ndarray:
    # each probe's quadrature is normalized to unit mass before averaging
    acc = np.zeros(grid.size)
    for pq in probes:
        acc += gaussian_kernel(grid, pq.nodes, sigma2) @ (pq.weights / pq.probe_norm2)
    return acc / len(probes)


def slq_density(oracle: HvpOracle, m: int, k: int, sigma2: float, grid: Any | None = None,
                seed: int = 0) -> DensityEstimate:
    if k < 1:
        raise ValueError("need at least one probe")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    probes = [probe_quadrature(oracle, m, seed, i) for i in range(k)]
    if grid is None:
        grid = auto_grid(np.concatenate([p.nodes for p in probes]), sigma2)
    g = _check_grid(grid)
    return DensityEstimate(g, density_from_probes(probes, sigma2, g), sigma2, k, m, probes)


@dataclass
class ConvergenceTable:
    k_values: list[int]
    l1: list[float]
    k_ref: int
    slope: float


def l1_distance(a: np.ndarray, b: np.ndarray, grid: np.ndarray) -> float:
    return float(np.trapezoid(np.abs(a - b), grid))


def probe_convergence(oracle: HvpOracle, m: int, sigma2: float, grid: Any, k_values: Sequence[int],
                      seed: int = 0, k_ref: int | None = None) -> ConvergenceTable:
    """L1 distance of the k-probe estimate to a high-k reference, with a log-log slope."""
    ks = [int(k) for k in k_values]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_values must be increasing")
    g = _check_grid(grid)
    k_ref = 10 * ks[-1] if k_ref is None else k_ref
    probes = [probe_quadrature(oracle, m, seed, i) for i in range(max(k_ref, ks[-1]))]
    ref = density_from_probes(probes[:k_ref], sigma2, g)
    errs = [l1_distance(density_from_probes(probes[:k], sigma2, g), ref, g) for k in ks]
    x = np.log([k for k, e in zip(ks, errs) if e > 0])
    y = np.log([e for e in errs if e > 0])
    slope = float(np.polyfit(x, y, 1)[0]) if x.size >= 2 else float("nan")
    return ConvergenceTable(ks, errs, k_ref, slope)
