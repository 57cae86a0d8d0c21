"""Lanczos tridiagonalization with full reorthogonalization, Ritz pairs,
spike/bulk labelling and eigenspace stability diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .operators import HvpOracle
from .vecspace import TridiagonalMatrix, as_vector, dot, gram_schmidt_residual, tridiag_eigh, unit_gaussian

CLEAR, BORDERLINE, EXCLUDED = "clear_spike", "borderline", "excluded"


@dataclass
class SpikeBasis:
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (K, p), one Ritz vector per row
    source: dict[str, Any] = field(default_factory=dict)
    orth_error: float = 0.0

    def __post_init__(self) -> None:
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if self.eigenvalues.size != self.vectors.shape[0]:
            raise ValueError("one eigenvalue per vector")

    def __len__(self) -> int:
        return self.eigenvalues.size

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def head(self, k: int) -> "SpikeBasis":
        return SpikeBasis(self.eigenvalues[:k], self.vectors[:k], dict(self.source), orthogonality_error(self.vectors[:k]))

    @classmethod
    def empty(cls, dim: int) -> "SpikeBasis":
        return cls(np.zeros(0), np.zeros((0, dim)))


def orthogonality_error(V: np.ndarray) -> float:
    if V.shape[0] == 0:
        return 0.0
    G = V @ V.T
    return float(np.max(np.abs(G - np.eye(G.shape[0]))))


@dataclass
class LanczosResult:
    T: TridiagonalMatrix
    Q: np.ndarray  # (j, p) Lanczos basis rows
    exhausted: bool


def lanczos(oracle: HvpOracle, q1: Any, m: int, tol: float = 1e-10) -> LanczosResult:
    """``m`` steps of the three-term recurrence, reorthogonalizing every step.

    Stops early when the new off-diagonal falls below ``tol`` times the
    largest ``|alpha|``, ``|beta|`` seen so far (Krylov space exhausted).
    """
    q1 = as_vector(q1)
    if m < 1:
        raise ValueError("order m must be >= 1")
    if abs(np.linalg.norm(q1) - 1.0) > 1e-12:
        raise ValueError("starting vector must have unit norm")
    if q1.size != oracle.dim:
        raise ValueError("starting vector dimension does not match the operator")
    Q = np.zeros((m, oracle.dim))
    Q[0] = q1
    alphas: list[float] = []
    betas: list[float] = []
    scale = 0.0
    exhausted = False
    for j in range(m):
        z = oracle.apply(Q[j])
        if j > 0:
            z = z - betas[-1] * Q[j - 1]
        a = dot(Q[j], z)
        z = z - a * Q[j]
        z = gram_schmidt_residual(z, Q[: j + 1])
        b = float(np.linalg.norm(z))
        alphas.append(a)
        scale = max(scale, abs(a))
        if j == m - 1:
            break
        if b <= tol * scale:
            exhausted = True
            break
        scale = max(scale, b)
        betas.append(b)
        Q[j + 1] = z / b
    k = len(alphas)
    return LanczosResult(TridiagonalMatrix(np.array(alphas), np.array(betas)), Q[:k], exhausted)


def ritz(T: TridiagonalMatrix, Q: np.ndarray, top_k: int, source: dict[str, Any] | None = None) -> SpikeBasis:
    if top_k > T.size:
        raise ValueError(f"top_k={top_k} exceeds the Lanczos order {T.size}")
    vals, U = tridiag_eigh(T)
    V = U[:, :top_k].T @ Q
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return SpikeBasis(vals[:top_k], V, dict(source or {}), orthogonality_error(V))


def top_eigenpairs(oracle: HvpOracle, k: int, m: int, seed: int = 0, tol: float = 1e-10,
                   start: np.ndarray | None = None, orthogonal_to: np.ndarray | None = None) -> SpikeBasis:
    """Top-``k`` Ritz pairs from an ``m``-step run started at a seeded Gaussian vector.

    ``orthogonal_to`` (orthonormal rows) is projected out of the start vector;
    on a deflated operator that keeps the whole Krylov space, and so every
    Ritz vector, orthogonal to the deflated directions.
    """
    q1 = unit_gaussian(oracle.dim, seed) if start is None else np.asarray(start, dtype=np.float64)
    if orthogonal_to is not None and np.size(orthogonal_to):
        Q = np.atleast_2d(orthogonal_to)
        for _ in range(2):
            q1 = q1 - Q.T @ (Q @ q1)
    q1 = q1 / np.linalg.norm(q1)
    res = lanczos(oracle, q1, m, tol)
    k = min(k, res.T.size)
    src = {"oracle": oracle.source, "m": m, "steps": res.T.size, "seed": seed}
    return ritz(res.T, res.Q, k, src)


def classify_spikes(eigenvalues: Sequence[float], bulk_median: float, gap_factor: float = 1e3) -> list[str]:
    threshold = gap_factor * bulk_median
    out = []
    for lam in eigenvalues:
        if lam < 0:
            out.append(EXCLUDED)
        elif lam >= threshold:
            out.append(CLEAR)
        else:
            out.append(BORDERLINE)
    return out


@dataclass
class StabilityReport:
    matched_mean: float
    matched_min: float
    diagonal_mean: float
    angles: dict[int, tuple[float, float]]  # k -> (max deg, mean deg)

    def to_dict(self) -> dict[str, Any]:
        return {
            "matched_mean": self.matched_mean,
            "matched_min": self.matched_min,
            "diagonal_mean": self.diagonal_mean,
            "angles": {int(k): {"max": a, "mean": b} for k, (a, b) in self.angles.items()},
        }


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles (degrees, ascending) between the row spaces of orthonormal A and B.

    Small angles come from the sines (arccos is ill-conditioned near 1).
    """
    cos = np.clip(np.linalg.svd(A @ B.T, compute_uv=False), 0.0, 1.0)
    sin = np.clip(np.linalg.svd(B - (B @ A.T) @ A, compute_uv=False)[::-1], 0.0, 1.0)
    k = min(cos.size, sin.size)
    cos, sin = cos[:k], sin[:k]
    ang = np.where(cos * cos < 0.5, np.arccos(cos), np.arcsin(sin))
    return np.sort(np.degrees(ang))


def greedy_match(C: np.ndarray) -> list[tuple[int, int]]:
    """Greedy assignment on an absolute-cosine matrix (largest entries first)."""
    C = np.array(C, dtype=np.float64)
    pairs = []
    for _ in range(min(C.shape)):
        i, j = np.unravel_index(np.argmax(C), C.shape)
        pairs.append((int(i), int(j)))
        C[i, :] = -np.inf
        C[:, j] = -np.inf
    return pairs


def subspace_stability(basis_a: SpikeBasis, basis_b: SpikeBasis, ks: Sequence[int]) -> StabilityReport:
    if basis_a.dim != basis_b.dim:
        raise ValueError("bases live in different dimensions")
    n = min(len(basis_a), len(basis_b))
    for k in ks:
        if k > n:
            raise ValueError(f"k={k} exceeds the basis size {n}")
    A, B = basis_a.vectors[:n], basis_b.vectors[:n]
    C = np.clip(np.abs(A @ B.T), 0.0, 1.0)
    matched = np.array([C[i, j] for i, j in greedy_match(C)])
    diag = np.diag(C)
    angles = {}
    for k in ks:
        ang = principal_angles(A[:k], B[:k])
        angles[int(k)] = (float(ang.max()), float(ang.mean()))
    return StabilityReport(float(matched.mean()), float(matched.min()), float(diag.mean()), angles)
