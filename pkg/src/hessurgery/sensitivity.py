"""Spike-class sensitivity matrices and their rank diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import models
from .data import Dataset, stratified_indices
from .models import Batch, MlpSpec
from .vecspace import as_vector

AccuracyFn = Callable[[np.ndarray], np.ndarray]


class SensitivityError(ValueError):
    pass


@dataclass
class SensitivityMatrix:
    S: np.ndarray  # (K, C): accuracy fraction per unit amplitude
    eps: float
    noise_floor: float
    split: str = "sensitivity"
    source: dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.S.shape

    def thresholded(self) -> np.ndarray:
        """Entries below the quantization floor set to zero."""
        return np.where(np.abs(self.S) < self.noise_floor, 0.0, self.S)


def accuracy_fn(spec: MlpSpec, batch: Batch) -> AccuracyFn:
    def acc(theta: np.ndarray) -> np.ndarray:
        return models.per_class_accuracy(spec, theta, batch).per_class

    return acc


def sensitivity_from_fn(acc: AccuracyFn, theta: Any, vectors: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of ``acc`` along each row of ``vectors`` (2K evaluations)."""
    if eps <= 0:
        raise ValueError("probe amplitude must be positive")
    theta = as_vector(theta)
    V = np.atleast_2d(vectors)
    rows = []
    for q in V:
        plus = acc(theta + eps * q)
        minus = acc(theta - eps * q)
        rows.append((plus - minus) / (2.0 * eps))
    if not rows:
        return np.zeros((0, 0))
    return np.vstack(rows)


def sensitivity_matrix(spec: MlpSpec, theta: Any, basis: Any, eps: float, batch: Batch,
                       split: str = "sensitivity") -> SensitivityMatrix:
    counts = np.bincount(batch.y, minlength=spec.n_classes)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise SensitivityError(f"classes {missing} are absent from the split; sensitivity undefined")
    vectors = getattr(basis, "vectors", basis)
    S = sensitivity_from_fn(accuracy_fn(spec, batch), theta, vectors, eps)
    if S.size == 0:
        S = np.zeros((0, spec.n_classes))
    return SensitivityMatrix(S, float(eps), noise_floor(eps, counts), split,
                             {"basis": getattr(basis, "source", {})})


def noise_floor(eps: float, counts: Any) -> float:
    """Smallest non-zero |S| entry: one sample flipping in the smallest class."""
    return 1.0 / (2.0 * eps * float(np.min(counts)))


def stratified_split(data: Dataset, per_class_cap: int, seed: int = 0) -> Batch:
    """At most ``per_class_cap`` train samples per class (small classes kept whole)."""
    b = data.split("train")
    return b.take(stratified_indices(b.y, per_class_cap, data.n_classes, seed))


@dataclass
class RankDiagnostics:
    singular_values: np.ndarray
    energy: np.ndarray
    r_eff: float
    flatness: float
    frobenius: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "energy": [float(p) for p in self.energy],
            "r_eff": self.r_eff,
            "flatness": self.flatness,
            "frobenius": self.frobenius,
        }


def rank_from_singular_values(sv: Any) -> RankDiagnostics:
    s = np.sort(np.abs(np.asarray(sv, dtype=np.float64)))[::-1]
    total = float(np.sum(s * s))
    if s.size == 0 or total == 0.0:
        raise ValueError("effective rank is undefined for an all-zero matrix")
    p = s * s / total
    nz = p[p > 0]
    r_eff = math.exp(-float(np.sum(nz * np.log(nz))))
    flat = float(s[0] / s[1]) if s.size > 1 and s[1] > 0 else math.inf
    return RankDiagnostics(s, p, r_eff, flat, math.sqrt(total))


def effective_rank(S: Any) -> RankDiagnostics:
    """Entropic effective rank ``exp(-sum p_i log p_i)``, ``p_i = s_i^2 / sum s_j^2``."""
    M = getattr(S, "S", S)
    return rank_from_singular_values(np.linalg.svd(np.asarray(M, dtype=np.float64), compute_uv=False))
