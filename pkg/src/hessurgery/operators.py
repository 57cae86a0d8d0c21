"""Matrix-free symmetric operators (HVP oracles) and deflation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import models
from .models import Batch, MlpSpec
from .vecspace import Rng, as_vector, dense_eigh


class DeflationError(RuntimeError):
    pass


@dataclass(frozen=True)
class HvpOracle:
    apply_fn: Callable[[np.ndarray], np.ndarray]
    dim: int
    source: dict[str, Any] = field(default_factory=dict)
    cost_hint: float = 0.0

    def apply(self, v: Any) -> np.ndarray:
        v = as_vector(v)
        if v.size != self.dim:
            raise ValueError(f"vector has {v.size} entries, operator dimension is {self.dim}")
        return self.apply_fn(v)

    __call__ = apply

    def to_dense(self) -> np.ndarray:
        """Column-by-column expansion; oracle-scale dimensions only."""
        return np.column_stack([self.apply(e) for e in np.eye(self.dim)])


def _matvec_sequential(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    # row-wise sequential accumulation (cumsum is strictly left to right)
    return np.cumsum(M * v, axis=1)[:, -1]


def dense_oracle(M: Any, sym_tol: float = 1e-8) -> HvpOracle:
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("need a square matrix")
    if M.shape[0] > 4096:
        raise ValueError("dense oracles are limited to dimension 4096")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    M.setflags(write=False)
    return HvpOracle(lambda v: _matvec_sequential(M, v), M.shape[0], {"kind": "dense", "dim": M.shape[0]})


@dataclass(frozen=True)
class SpikedOperatorSpec:
    p: int
    spike_values: tuple[float, ...]
    bulk_scale: float = 0.03
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"p": self.p, "spike_values": list(self.spike_values),
                "bulk_scale": self.bulk_scale, "seed": self.seed}


@dataclass(frozen=True)
class SpikedOperator:
    """Known-spectrum operator ``F diag(spectrum) F^T``; ``frame`` columns are eigenvectors."""

    spec: SpikedOperatorSpec
    frame: np.ndarray
    spectrum: np.ndarray
    oracle: HvpOracle

    @property
    def spike_vectors(self) -> np.ndarray:
        return self.frame[:, : len(self.spec.spike_values)]

    @property
    def bulk_median(self) -> float:
        return float(np.median(self.spectrum[len(self.spec.spike_values):]))


def spiked_operator(spec: SpikedOperatorSpec) -> SpikedOperator:
    k = len(spec.spike_values)
    if k >= spec.p:
        raise ValueError("spike count must be smaller than p")
    if spec.bulk_scale <= 0:
        raise ValueError("bulk_scale must be positive")
    rng = Rng(spec.seed)
    F, R = np.linalg.qr(rng.spawn("frame").normal(spec.p * spec.p).reshape(spec.p, spec.p))
    F = F * np.sign(np.diag(R))
    bulk = spec.bulk_scale * rng.spawn("bulk").uniform(spec.p - k)
    spectrum = np.concatenate([np.asarray(spec.spike_values, dtype=np.float64), bulk])
    F.setflags(write=False)

    def apply(v: np.ndarray) -> np.ndarray:
        return F @ (spectrum * (F.T @ v))

    oracle = HvpOracle(apply, spec.p, {"kind": "spiked", **spec.to_dict()})
    return SpikedOperator(spec, F, spectrum, oracle)


def spiked_oracle(spec: SpikedOperatorSpec) -> HvpOracle:
    return spiked_operator(spec).oracle


def model_oracle(spec: MlpSpec, theta: Any, batch: Batch, source: dict[str, Any] | None = None) -> HvpOracle:
    """Stochastic Hessian of the mini-batch loss at ``theta`` (batch fixed for the oracle's life)."""
    if len(batch) < 1:
        raise ValueError("HVP batch must be non-empty")
    theta = as_vector(theta).copy()
    theta.setflags(write=False)
    info = {"kind": "model", "n": len(batch), **(source or {})}
    return HvpOracle(lambda v: models.hvp(spec, theta, batch, v), spec.n_params, info)


def orthonormalize(Q: Any, tol: float = 1e-8) -> np.ndarray:
    """QR re-orthonormalization of the rows of ``Q``; checks the result."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if Q.size == 0:
        return np.zeros((0, Q.shape[-1] if Q.ndim == 2 else 0))
    q, r = np.linalg.qr(Q.T)
    rd = np.abs(np.diag(r))
    if rd.min() <= tol * rd.max():
        raise DeflationError("basis rows are linearly dependent")
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    Qn = q.T
    err = np.max(np.abs(Qn @ Qn.T - np.eye(Qn.shape[0])))
    if err > tol:
        raise DeflationError(f"basis not orthonormal after QR (error {err:.2e})")
    return Qn


def deflate(oracle: HvpOracle, Q_prev: Any) -> HvpOracle:
    """``(I - Q Q^T) H (I - Q Q^T)`` with the rows of ``Q_prev`` as ``Q``."""
    Q = np.atleast_2d(np.asarray(Q_prev, dtype=np.float64)) if np.size(Q_prev) else np.zeros((0, oracle.dim))
    if Q.shape[0] == 0:
        return oracle
    if Q.shape[1] != oracle.dim:
        raise ValueError("deflation basis dimension does not match the operator")
    Q = orthonormalize(Q)
    Q.setflags(write=False)

    def proj(v: np.ndarray) -> np.ndarray:
        return v - Q.T @ (Q @ v)

    def apply(v: np.ndarray) -> np.ndarray:
        return proj(oracle.apply(proj(v)))

    src = {"kind": "deflated", "k": Q.shape[0], "inner": oracle.source}
    return HvpOracle(apply, oracle.dim, src, oracle.cost_hint)


def check_linear_symmetric(oracle: HvpOracle, pairs: int = 20, seed: int = 0) -> tuple[float, float]:
    """Worst relative linearity and symmetry defects over random pairs."""
    rng = Rng(seed)
    lin = sym = 0.0
    for _ in range(pairs):
        u = rng.normal(oracle.dim)
        v = rng.normal(oracle.dim)
        a, b = rng.normal(2)
        Hu, Hv = oracle.apply(u), oracle.apply(v)
        Hw = oracle.apply(a * u + b * v)
        scale = max(np.linalg.norm(a * Hu) + np.linalg.norm(b * Hv), 1e-300)
        lin = max(lin, float(np.linalg.norm(Hw - a * Hu - b * Hv) / scale))
        s1, s2 = float(u @ Hv), float(v @ Hu)
        denom = max(abs(s1), abs(s2), np.linalg.norm(u) * np.linalg.norm(Hv) * 1e-12, 1e-300)
        sym = max(sym, abs(s1 - s2) / denom)
    return lin, sym


def time_apply(oracle: HvpOracle, repeats: int = 5, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one ``apply`` call, in seconds."""
    v = Rng(seed).normal(oracle.dim)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        oracle.apply(v)
        best = min(best, time.perf_counter() - t0)
    return best


def exact_spectrum(oracle: HvpOracle) -> np.ndarray:
    return dense_eigh(oracle.to_dense(), sym_tol=1e-6)[0]
