"""Seeded Gaussian-blob classification fixtures.

Each class is an isotropic unit-variance blob in ``d`` dimensions. Class
means sit on a scaled simplex-like frame (far apart), except for designated
"entangled" pairs whose means are pulled to a small distance so that the two
classes overlap, much like two visually similar image classes. The whole
cloud is finally multiplied by ``scale``; small inputs keep first-layer
curvature below the output-layer outliers.

All three splits (train / sensitivity / heldout) are drawn i.i.d. from the
same class frequencies.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from .models import Batch
from .vecspace import Rng

SPLITS = ("train", "sensitivity", "heldout")


class SplitAccessError(RuntimeError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    splits: dict[str, np.ndarray]
    manifest: dict[str, Any] = field(default_factory=dict)
    _forbidden: set = field(default_factory=set, repr=False)
    access_log: list = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if np.any(self.y < 0) or np.any(self.y >= self.n_classes):
            raise ValueError("labels out of range")
        seen: set[int] = set()
        for name, idx in self.splits.items():
            s = set(int(i) for i in idx)
            if seen & s:
                raise ValueError(f"split {name!r} overlaps another split")
            seen |= s

    def split(self, name: str) -> Batch:
        if name in self._forbidden:
            raise SplitAccessError(f"access to split {name!r} is forbidden here")
        self.access_log.append(name)
        idx = self.splits[name]
        return Batch(self.X[idx], self.y[idx])

    @contextlib.contextmanager
    def forbid(self, *names: str) -> Iterator[None]:
        """Make ``split(name)`` raise inside the block (split-access audit)."""
        added = set(names) - self._forbidden
        self._forbidden |= added
        try:
            yield
        finally:
            self._forbidden -= added

    def class_frequencies(self, split: str = "train") -> np.ndarray:
        y = self.y[self.splits[split]]
        return np.bincount(y, minlength=self.n_classes) / y.size


@dataclass(frozen=True)
class BlobSpec:
    frequencies: tuple[float, ...]
    dim: int = 20
    separation: float = 4.0
    entangled: tuple[tuple[int, int, float], ...] = ()
    n_train: int = 2000
    n_sensitivity: int = 2000
    n_heldout: int = 2000
    seed: int = 0
    scale: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "frequencies": list(self.frequencies),
            "dim": self.dim,
            "separation": self.separation,
            "entangled": [list(e) for e in self.entangled],
            "n_train": self.n_train,
            "n_sensitivity": self.n_sensitivity,
            "n_heldout": self.n_heldout,
            "seed": self.seed,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BlobSpec":
        return cls(
            tuple(float(f) for f in d["frequencies"]),
            int(d.get("dim", 20)),
            float(d.get("separation", 4.0)),
            tuple((int(a), int(b), float(s)) for a, b, s in d.get("entangled", ())),
            int(d.get("n_train", 2000)),
            int(d.get("n_sensitivity", 2000)),
            int(d.get("n_heldout", 2000)),
            int(d.get("seed", 0)),
            float(d.get("scale", 1.0)),
        )


def class_means(spec: BlobSpec) -> np.ndarray:
    C = len(spec.frequencies)
    if spec.dim < C:
        raise ValueError("need dim >= number of classes")
    rng = Rng(spec.seed).spawn("means")
    # random orthonormal frame: pairwise distance separation * sqrt(2)
    G = rng.normal(spec.dim * C).reshape(spec.dim, C)
    Q, _ = np.linalg.qr(G)
    means = spec.separation * Q.T
    for a, b, dist in spec.entangled:
        mid = 0.5 * (means[a] + means[b])
        u = means[b] - means[a]
        u /= np.linalg.norm(u)
        means[a] = mid - 0.5 * dist * u
        means[b] = mid + 0.5 * dist * u
    return means


def _draw_labels(rng: Rng, n: int, freqs: np.ndarray) -> np.ndarray:
    # exact per-class counts (largest remainder), then shuffled
    raw = freqs * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    counts[np.argsort(-(raw - counts), kind="stable")[:rem]] += 1
    y = np.repeat(np.arange(freqs.size), counts)
    return y[rng.permutation(n)]


def make_blobs(spec: BlobSpec) -> Dataset:
    freqs = np.asarray(spec.frequencies, dtype=np.float64)
    if np.any(freqs <= 0) or abs(freqs.sum() - 1.0) > 1e-9:
        raise ValueError("frequencies must be positive and sum to 1")
    means = class_means(spec)
    rng = Rng(spec.seed).spawn("samples")
    sizes = {"train": spec.n_train, "sensitivity": spec.n_sensitivity, "heldout": spec.n_heldout}
    ys = [_draw_labels(rng.spawn("labels", name), n, freqs) for name, n in sizes.items()]
    y = np.concatenate(ys)
    X = spec.scale * (means[y] + rng.normal(y.size * spec.dim).reshape(y.size, spec.dim))
    splits = {}
    start = 0
    for name, n in sizes.items():
        splits[name] = np.arange(start, start + n)
        start += n
    manifest = {"blobs": spec.to_dict(), "splits": {k: [int(v[0]), int(v[-1]) + 1] for k, v in splits.items() if v.size}}
    return Dataset(X, y, freqs.size, splits, manifest)


PRESETS: dict[str, dict[str, Any]] = {
    "imbalanced-4": {
        "frequencies": [0.55, 0.25, 0.15, 0.05],
        "entangled": [[0, 3, 2.0], [1, 2, 2.5]],
        "n_train": 4000,
        "n_sensitivity": 4000,
        "n_heldout": 4000,
        "scale": 0.2,
    },
    "balanced-4": {
        "frequencies": [0.25, 0.25, 0.25, 0.25],
        "entangled": [[0, 3, 2.0], [1, 2, 2.5]],
        "n_train": 4000,
        "n_sensitivity": 4000,
        "n_heldout": 4000,
        "scale": 0.2,
    },
    "twelve-class": {
        "frequencies": [0.16, 0.14, 0.12, 0.1, 0.09, 0.08, 0.07, 0.06, 0.05, 0.05, 0.04, 0.04],
        "entangled": [[0, 11, 2.0], [1, 10, 2.2], [2, 9, 2.5]],
        "n_train": 3000,
        "n_sensitivity": 3000,
        "n_heldout": 3000,
        "scale": 0.2,
    },
    "skewed-8": {
        "frequencies": [0.5, 0.2, 0.1, 0.07, 0.05, 0.04, 0.025, 0.015],
        "entangled": [[0, 7, 2.0], [1, 6, 2.5]],
        "n_train": 4000,
        "scale": 0.2,
    },
}


def preset(name: str, seed: int = 0, **overrides: Any) -> BlobSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown fixture preset {name!r}; choose from {sorted(PRESETS)}")
    d = dict(PRESETS[name])
    d.update(overrides)
    d["seed"] = seed
    return BlobSpec.from_dict(d)


def uniform_batch(data: Dataset, n: int, seed: int, split: str = "train") -> Batch:
    b = data.split(split)
    idx = Rng(seed).permutation(len(b))[: min(n, len(b))]
    return b.take(np.sort(idx))


def stratified_indices(y: np.ndarray, per_class_cap: int, n_classes: int, seed: int) -> np.ndarray:
    if per_class_cap < 1:
        raise ValueError("per_class_cap must be >= 1")
    rng = Rng(seed)
    picked = []
    for c in range(n_classes):
        idx = np.flatnonzero(y == c)
        if idx.size == 0:
            raise ValueError(f"class {c} is empty")
        perm = rng.spawn("class", c).permutation(idx.size)
        picked.append(idx[np.sort(perm[:per_class_cap])])
    return np.sort(np.concatenate(picked))


def stratified_batch(data: Dataset, per_class: int, seed: int, split: str = "train") -> Batch:
    """At most ``per_class`` samples from each class of ``split``."""
    b = data.split(split)
    return b.take(stratified_indices(b.y, per_class, data.n_classes, seed))


def nested_batches(data: Dataset, sizes: Sequence[int], seed: int, split: str = "train") -> list[Batch]:
    """Prefixes of one seeded permutation, so each batch contains the smaller ones."""
    b = data.split(split)
    perm = Rng(seed).permutation(len(b))
    return [b.take(perm[: min(n, len(b))]) for n in sizes]
