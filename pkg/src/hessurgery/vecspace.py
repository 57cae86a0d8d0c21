"""Parameter-space linear algebra.

Flat parameter vectors are plain 1-D ``float64`` numpy arrays. This module
adds the pieces the rest of the package needs on top of numpy: a
sequential-order dot product, Gram-Schmidt reorthogonalization, an
implicit-shift QL eigensolver for symmetric tridiagonal matrices, a seeded
counter-based generator, and a bit-exact text serialization of vectors.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

FORMAT_VERSION = 1
_MASK64 = (1 << 64) - 1


class DimensionError(ValueError):
    pass


def as_vector(x: Any) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def dot(a: Any, b: Any) -> float:
    """Inner product with strict left-to-right summation.

    ``np.cumsum`` accumulates sequentially, so the last partial sum is the
    sequential reduction regardless of the BLAS in use.
    """
    a = as_vector(a)
    b = as_vector(b)
    _check_same(a, b)
    if a.size == 0:
        return 0.0
    return float(np.cumsum(a * b)[-1])


def norm(a: Any) -> float:
    return math.sqrt(dot(a, a))


def _basis_matrix(basis: Any, dim: int) -> np.ndarray:
    if isinstance(basis, np.ndarray) and basis.ndim == 2:
        B = basis
    else:
        vecs = list(basis)
        if not vecs:
            return np.zeros((0, dim))
        B = np.vstack([as_vector(v) for v in vecs])
    if B.shape[0] and B.shape[1] != dim:
        raise DimensionError(f"basis dimension {B.shape[1]} != vector dimension {dim}")
    return B


def gram_schmidt_residual(z: Any, basis: Any, tol: float = 1e-10) -> np.ndarray:
    """Remove the components of ``z`` along an orthonormal ``basis``.

    Classical Gram-Schmidt, with a second pass only when an inner product
    with the basis still exceeds ``tol`` (scaled by ``max(1, |z|)``) after
    the first one.
    """
    z = as_vector(z).copy()
    B = _basis_matrix(basis, z.size)
    if B.shape[0] == 0:
        return z
    scale = max(1.0, float(np.linalg.norm(z)))
    for _ in range(2):
        coeffs = B @ z
        z -= B.T @ coeffs
        if np.max(np.abs(B @ z)) <= tol * scale:
            break
    return z


@dataclass(frozen=True)
class TridiagonalMatrix:
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.diag, dtype=np.float64).copy()
        e = np.asarray(self.offdiag, dtype=np.float64).copy()
        if d.ndim != 1 or e.ndim != 1 or e.size != max(d.size - 1, 0):
            raise ValueError("offdiag must have length len(diag) - 1")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "offdiag", e)

    @property
    def size(self) -> int:
        return self.diag.size

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


def _tql(d: np.ndarray, e: np.ndarray, z: np.ndarray, max_iter: int = 60) -> None:
    """Implicit-shift QL on (d, e) in place; rotations accumulated into rows of ``z.T``.

    ``e`` has length n with e[n-1] unused. ``z`` has shape (r, n): it holds the
    requested rows of the eigenvector matrix and is updated column-pair-wise.
    """
    n = d.size
    eps = np.finfo(np.float64).eps
    zt = z.T  # (n, r) view; column k of z is row k of zt
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_iter:
                raise np.linalg.LinAlgError("tridiagonal QL failed to converge")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            underflow = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                f = zt[i + 1].copy()
                zt[i + 1] = s * zt[i] + c * f
                zt[i] = c * zt[i] - s * f
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0


def tridiag_eigh(T: TridiagonalMatrix, rows: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric tridiagonal matrix, eigenvalues descending.

    Returns ``(values, vectors)`` with eigenvectors as columns. If ``rows`` is
    given, only those rows of the eigenvector matrix are accumulated (SLQ
    needs just the first one), which makes the solve O(n^2).
    """
    n = T.size
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    d = T.diag.copy()
    e = np.zeros(n)
    e[: n - 1] = T.offdiag
    full = np.eye(n)
    z = full if rows is None else full[list(rows)].copy()
    _tql(d, e, z)
    order = np.argsort(-d, kind="stable")
    vals = d[order]
    vecs = z[:, order]
    if rows is None:
        # fix signs so the largest-magnitude component of each vector is positive
        idx = np.argmax(np.abs(vecs), axis=0)
        signs = np.sign(vecs[idx, np.arange(n)])
        signs[signs == 0] = 1.0
        vecs = vecs * signs
    return vals, vecs


def dense_eigh(M: Any, sym_tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Full symmetric eigendecomposition (LAPACK), eigenvalues descending."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("dense_eigh needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    return vals[::-1].copy(), vecs[:, ::-1].copy()


class Rng:
    """Seeded Philox-4x64 stream (counter-based, key = seed, counter starts at 0).

    Uniforms take the top 53 bits of each raw 64-bit output; Gaussians use
    Box-Muller on consecutive uniform pairs. Only the raw integer stream
    comes from numpy's Philox bit generator, so the derived values do not
    depend on numpy's distribution code.
    """

    ALGORITHM = "philox4x64-10/box-muller/v1"

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._bits = np.random.Philox(key=self.seed)

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(int(n)).astype(np.uint64)

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def normal(self, n: int) -> np.ndarray:
        n = int(n)
        half = (n + 1) // 2
        u = self.uniform(2 * half).reshape(half, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u in (0, 1]
        t = 2.0 * np.pi * u[:, 1]
        out = np.empty(2 * half)
        out[0::2] = r * np.cos(t)
        out[1::2] = r * np.sin(t)
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.raw(n), kind="stable")

    def spawn(self, *tags: Any) -> "Rng":
        return Rng(derive_seed(self.seed, *tags))


def derive_seed(seed: int, *tags: Any) -> int:
    """Deterministic 64-bit child seed from a parent seed and tags."""
    text = ":".join([str(int(seed) & _MASK64), *map(str, tags)])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


def unit_gaussian(dim: int, seed: int) -> np.ndarray:
    v = Rng(seed).normal(dim)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------- file format
#
#   @ key = <json value>          (optional metadata lines)
#   PARAMVECTOR v1 <dim>
#   <16 hex digits>               (one big-endian IEEE-754 double per line)


@dataclass
class VectorFile:
    data: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)


def dumps_vector(v: Any, meta: dict[str, Any] | None = None) -> str:
    v = as_vector(v)
    lines = [f"@ {k} = {json.dumps(val, sort_keys=True)}" for k, val in (meta or {}).items()]
    lines.append(f"PARAMVECTOR v{FORMAT_VERSION} {v.size}")
    raw = v.astype(">f8").tobytes().hex()
    lines.extend(raw[i : i + 16] for i in range(0, len(raw), 16))
    return "\n".join(lines) + "\n"


def loads_vector(text: str) -> VectorFile:
    meta: dict[str, Any] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("@ "):
        key, _, val = lines[i][2:].partition(" = ")
        meta[key] = json.loads(val)
        i += 1
    if i >= len(lines):
        raise ValueError("missing PARAMVECTOR header")
    head = lines[i].split()
    if len(head) != 3 or head[0] != "PARAMVECTOR" or head[1] != f"v{FORMAT_VERSION}":
        raise ValueError(f"bad header: {lines[i]!r}")
    dim = int(head[2])
    body = lines[i + 1 : i + 1 + dim]
    if len(body) != dim or any(len(h) != 16 for h in body):
        raise ValueError("truncated or malformed vector body")
    data = np.frombuffer(bytes.fromhex("".join(body)), dtype=">f8").astype(np.float64)
    return VectorFile(data, meta)


def save_vector(path: str | Path, v: Any, meta: dict[str, Any] | None = None) -> None:
    Path(path).write_text(dumps_vector(v, meta))


def load_vector(path: str | Path) -> VectorFile:
    return loads_vector(Path(path).read_text())
