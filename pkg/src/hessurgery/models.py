"""Small fully-connected softmax classifiers with exact gradients and HVPs.

Parameters are packed layer by layer as ``W_l`` (row-major, shape
``w_in x w_out``) followed by ``b_l``. Hessian-vector products are computed
forward-over-reverse: every quantity of the forward and backward pass
carries a tangent along ``v``, so ``H v`` costs about two gradient passes.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .vecspace import DimensionError, Rng, as_vector

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("cross_entropy", "focal", "weighted_ce")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str = "cross_entropy"
    gamma: float = 0.0
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.gamma < 0:
            raise ValueError("focal gamma must be >= 0")
        if self.kind == "weighted_ce":
            if not self.class_weights or any(w <= 0 for w in self.class_weights):
                raise ValueError("weighted_ce needs positive class_weights")
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))

    @classmethod
    def focal(cls, gamma: float = 2.0) -> "LossSpec":
        return cls("focal", gamma=gamma)

    @classmethod
    def weighted(cls, weights: Sequence[float]) -> "LossSpec":
        return cls("weighted_ce", class_weights=tuple(weights))


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    loss: LossSpec = field(default_factory=LossSpec)

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("need input, at least one hidden layer, and output")
        if any(w <= 0 for w in widths):
            raise ValueError("layer widths must be positive")
        if widths[-1] < 2:
            raise ValueError("need at least two classes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        cw = self.loss.class_weights
        if cw is not None and len(cw) != widths[-1]:
            raise ValueError("class_weights length must equal the number of classes")

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum((a + 1) * b for a, b in zip(w[:-1], w[1:]))

    def with_loss(self, loss: LossSpec) -> "MlpSpec":
        return replace(self, loss=loss)

    def layer_slices(self) -> list[tuple[slice, slice, tuple[int, int]]]:
        out = []
        pos = 0
        w = self.layer_widths
        for a, b in zip(w[:-1], w[1:]):
            ws = slice(pos, pos + a * b)
            pos += a * b
            bs = slice(pos, pos + b)
            pos += b
            out.append((ws, bs, (a, b)))
        return out

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        theta = as_vector(theta)
        if theta.size != self.n_params:
            raise DimensionError(f"theta has {theta.size} entries, spec needs {self.n_params}")
        return [(theta[ws].reshape(shape), theta[bs]) for ws, bs, shape in self.layer_slices()]

    def to_dict(self) -> dict[str, Any]:
        loss: dict[str, Any] = {"kind": self.loss.kind}
        if self.loss.kind == "focal":
            loss["gamma"] = self.loss.gamma
        if self.loss.class_weights is not None:
            loss["class_weights"] = list(self.loss.class_weights)
        return {"layer_widths": list(self.layer_widths), "activation": self.activation, "loss": loss}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MlpSpec":
        loss = d.get("loss", {"kind": "cross_entropy"})
        cw = loss.get("class_weights")
        return cls(
            tuple(d["layer_widths"]),
            d.get("activation", "tanh"),
            LossSpec(loss["kind"], float(loss.get("gamma", 0.0)), tuple(cw) if cw else None),
        )


@dataclass(frozen=True)
class Batch:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.y.size)

    def take(self, idx: Any) -> "Batch":
        return Batch(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class ClassAccuracy:
    per_class: np.ndarray  # NaN where a class has no samples
    counts: np.ndarray
    correct: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.counts > 0

    @property
    def global_acc(self) -> float:
        return float(self.correct.sum() / self.counts.sum())

    @property
    def sigma(self) -> float:
        return class_sigma(self.per_class[self.defined])

    @property
    def balanced(self) -> float:
        return float(np.mean(self.per_class[self.defined]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_class": [float(a) for a in self.per_class],
            "counts": [int(c) for c in self.counts],
            "global": self.global_acc,
            "sigma": self.sigma,
        }


def class_sigma(acc: Any) -> float:
    """Population standard deviation of per-class accuracies."""
    a = np.asarray(acc, dtype=np.float64)
    return float(np.sqrt(np.mean((a - a.mean()) ** 2)))


# ------------------------------------------------------------------ forward


def _logits(spec: MlpSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    a = X
    layers = spec.unpack(theta)
    for k, (W, b) in enumerate(layers):
        z = a @ W + b
        a = z if k == len(layers) - 1 else _act(spec.activation, z)
    return a


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def logits(spec: MlpSpec, theta: Any, batch: Batch) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("empty batch")
    return _logits(spec, as_vector(theta), batch.X)


def _log_softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))


def _sample_weights(loss: LossSpec, y: np.ndarray) -> np.ndarray:
    if loss.kind == "weighted_ce":
        return np.asarray(loss.class_weights)[y]
    return np.ones(y.size)


def _loss_terms(loss: LossSpec, Z: np.ndarray, y: np.ndarray):
    """Per-sample losses, dl/dz, and a closure giving d(dl/dz)[Zdot]."""
    n, C = Z.shape
    logp = _log_softmax(Z)
    P = np.exp(logp)
    rows = np.arange(n)
    onehot = np.zeros_like(Z)
    onehot[rows, y] = 1.0
    logpt = logp[rows, y]

    def dP(Zd: np.ndarray) -> np.ndarray:
        return P * Zd - P * np.sum(P * Zd, axis=1, keepdims=True)

    if loss.kind != "focal" or loss.gamma == 0.0:
        per = -logpt
        G = P - onehot
        return per, G, dP

    g = loss.gamma
    pt = np.exp(logpt)
    om = -np.expm1(logpt)  # 1 - pt
    pos = om > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        om_g = np.power(om, g)
        om_g1 = np.where(pos, np.power(om, g - 1.0), 0.0)
        om_g2 = np.where(pos, np.power(om, g - 2.0), 0.0)
    per = -om_g * logpt
    coef = g * pt * logpt * om_g1 - om_g  # dl/dz = coef * (e_y - p)
    G = coef[:, None] * (onehot - P)
    dcoef = g * om_g1 * (logpt + 2.0)
    if g != 1.0:
        dcoef = dcoef - g * (g - 1.0) * pt * logpt * om_g2

    def dG(Zd: np.ndarray) -> np.ndarray:
        dpt = pt * (Zd[rows, y] - np.sum(P * Zd, axis=1))
        return (dcoef * dpt)[:, None] * (onehot - P) - coef[:, None] * dP(Zd)

    return per, G, dG


def _backprop(spec: MlpSpec, theta: np.ndarray, batch: Batch, v: np.ndarray | None, want_grad: bool = True):
    """Loss, gradient and (if ``v`` is given) the Hessian-vector product."""
    theta = as_vector(theta)
    if len(batch) == 0:
        raise ValueError("empty batch")
    layers = spec.unpack(theta)
    tang = spec.unpack(as_vector(v)) if v is not None else None
    L = len(layers)
    relu = spec.activation == "relu"

    acts = [batch.X]
    dacts = [np.zeros_like(batch.X)] if tang is not None else None
    for k, (W, b) in enumerate(layers):
        z = acts[-1] @ W + b
        if tang is not None:
            V, vb = tang[k]
            zd = dacts[-1] @ W + acts[-1] @ V + vb
        if k == L - 1:
            break
        a = _act(spec.activation, z)
        acts.append(a)
        if tang is not None:
            dacts.append(((z > 0) * zd) if relu else (1.0 - a * a) * zd)

    sw = _sample_weights(spec.loss, batch.y)
    norm_ = sw.sum()
    per, G, dG = _loss_terms(spec.loss, z, batch.y)
    loss = float(np.dot(sw, per) / norm_)
    if not want_grad:
        return loss, None, None
    delta = G * (sw / norm_)[:, None]
    ddelta = dG(zd) * (sw / norm_)[:, None] if tang is not None else None

    grad = np.empty(spec.n_params)
    hv = np.empty(spec.n_params) if tang is not None else None
    slices = spec.layer_slices()
    for k in range(L - 1, -1, -1):
        W, _ = layers[k]
        ws, bs, _ = slices[k]
        a_in = acts[k]
        grad[ws] = (a_in.T @ delta).ravel()
        grad[bs] = delta.sum(axis=0)
        if tang is not None:
            hv[ws] = (dacts[k].T @ delta + a_in.T @ ddelta).ravel()
            hv[bs] = ddelta.sum(axis=0)
        if k == 0:
            break
        da = delta @ W.T
        a = acts[k]
        if tang is not None:
            V, _ = tang[k]
            dda = ddelta @ W.T + delta @ V.T
        if relu:
            mask = a > 0
            delta_new = da * mask
            if tang is not None:
                ddelta = dda * mask
        else:
            deriv = 1.0 - a * a
            delta_new = da * deriv
            if tang is not None:
                ddelta = dda * deriv - da * 2.0 * a * dacts[k]
        delta = delta_new
    return loss, grad, hv


def forward(spec: MlpSpec, theta: Any, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean loss and softmax probabilities on ``batch``."""
    Z = logits(spec, theta, batch)
    sw = _sample_weights(spec.loss, batch.y)
    per, _, _ = _loss_terms(spec.loss, Z, batch.y)
    return float(np.dot(sw, per) / sw.sum()), np.exp(_log_softmax(Z))


def loss_value(spec: MlpSpec, theta: Any, batch: Batch) -> float:
    return _backprop(spec, theta, batch, None, want_grad=False)[0]


def gradient(spec: MlpSpec, theta: Any, batch: Batch) -> np.ndarray:
    return _backprop(spec, theta, batch, None)[1]


def hvp(spec: MlpSpec, theta: Any, batch: Batch, v: Any) -> np.ndarray:
    v = as_vector(v)
    if v.size != spec.n_params:
        raise DimensionError(f"v has {v.size} entries, spec needs {spec.n_params}")
    return _backprop(spec, theta, batch, v)[2]


@dataclass(frozen=True)
class QuadraticObjective:
    """``0.5 * theta^T A theta`` with the same gradient/HVP surface as the MLP.

    Test-only loss variant; the HVP goes through the same dual-number idea
    (tangent of the gradient ``A theta`` along ``v``).
    """

    A: np.ndarray

    def loss(self, theta: Any) -> float:
        theta = as_vector(theta)
        return 0.5 * float(theta @ self.A @ theta)

    def gradient(self, theta: Any) -> np.ndarray:
        return self.A @ as_vector(theta)

    def hvp(self, theta: Any, v: Any) -> np.ndarray:
        # primal A theta, tangent A v
        return self.A @ as_vector(v)


# ----------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.005
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"

    def to_dict(self) -> dict[str, Any]:
        return {"epochs": self.epochs, "lr": self.lr, "batch_size": self.batch_size,
                "seed": self.seed, "optimizer": self.optimizer}


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    rng = Rng(seed)
    theta = np.zeros(spec.n_params)
    for ws, _, (a, b) in spec.layer_slices():
        theta[ws] = rng.normal(a * b) / math.sqrt(a)
    return theta


class _Adam:
    def __init__(self, n: int, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps

    def step(self, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return self.lr * mh / (np.sqrt(vh) + self.eps)


def _run_training(spec, theta, batch, config, project=None, on_epoch=None):
    if len(batch) == 0:
        raise ValueError("train split is empty")
    theta = as_vector(theta).copy()
    rng = Rng(config.seed).spawn("minibatch")
    opt = _Adam(theta.size, config.lr) if config.optimizer == "adam" else None
    if config.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    history = []
    n = len(batch)
    for epoch in range(config.epochs):
        if on_epoch is not None:
            on_epoch(epoch, theta)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            mb = batch.take(order[start : start + config.batch_size])
            _, g, _ = _backprop(spec, theta, mb, None)
            if project is not None:
                g = project(g)
            step = opt.step(g) if opt is not None else config.lr * g
            if project is not None:
                # Adam rescales per coordinate, so the step itself needs projecting
                step = project(step)
            theta -= step
        loss = loss_value(spec, theta, batch)
        if not math.isfinite(loss) or not np.all(np.isfinite(theta)):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
        history.append(loss)
        log.debug("epoch %d loss %.6f", epoch, loss)
    return theta, history


def train(spec: MlpSpec, batch: Batch, config: TrainConfig, theta0: Any | None = None) -> tuple[np.ndarray, list[float]]:
    """Minibatch training from a seeded init (or ``theta0``). Returns (theta, loss per epoch)."""
    theta = init_params(spec, config.seed) if theta0 is None else theta0
    return _run_training(spec, theta, batch, config)


def bulk_projected_finetune(
    spec: MlpSpec,
    theta: Any,
    batch: Batch,
    config: TrainConfig,
    basis: np.ndarray | None = None,
    refresh=None,
) -> tuple[np.ndarray, list[float]]:
    """Fine-tune with every gradient projected off the rows of ``basis``.

    ``refresh(theta) -> basis`` is called at the start of every epoch when
    given (the spike subspace rotates as training proceeds).
    """
    state = {"Q": _orthonormal_rows(basis)}

    def on_epoch(epoch, th):
        if refresh is not None:
            state["Q"] = _orthonormal_rows(refresh(th))

    def project(g):
        Q = state["Q"]
        if Q.shape[0] == 0:
            return g
        return g - Q.T @ (Q @ g)

    return _run_training(spec, theta, batch, config, project=project, on_epoch=on_epoch)


def _orthonormal_rows(basis) -> np.ndarray:
    if basis is None:
        return np.zeros((0, 0))
    B = np.atleast_2d(np.asarray(basis, dtype=np.float64))
    if B.size == 0:
        return np.zeros((0, 0))
    q, _ = np.linalg.qr(B.T)
    return q.T


# --------------------------------------------------------------- evaluation


def predict(spec: MlpSpec, theta: Any, batch: Batch) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits(spec, theta, batch), axis=1)


def accuracy_from_predictions(pred: np.ndarray, y: np.ndarray, n_classes: int) -> ClassAccuracy:
    counts = np.bincount(y, minlength=n_classes)
    correct = np.bincount(y[pred == y], minlength=n_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(counts > 0, correct / np.maximum(counts, 1), np.nan)
    return ClassAccuracy(per, counts, correct)


def per_class_accuracy(spec: MlpSpec, theta: Any, batch: Batch) -> ClassAccuracy:
    return accuracy_from_predictions(predict(spec, theta, batch), batch.y, spec.n_classes)


# ------------------------------------------------------- post-hoc baselines


def tau_normalize(spec: MlpSpec, theta: Any, tau: float) -> np.ndarray:
    """Rescale each final-layer weight column ``w_c`` to ``w_c / |w_c|^tau``."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    theta = as_vector(theta).copy()
    if tau == 0:
        return theta
    ws, _, (a, b) = spec.layer_slices()[-1]
    W = theta[ws].reshape(a, b)
    norms = np.sqrt(np.sum(W * W, axis=0))
    for c in range(b):
        if norms[c] == 0:
            warnings.warn(f"classifier column {c} has zero norm; left unchanged")
            continue
        W[:, c] = W[:, c] / norms[c] ** tau
    theta[ws] = W.ravel()
    return theta


def logit_adjust(scores: Any, priors: Any, tau: float) -> np.ndarray:
    """Predictions from ``argmax_c f_c(x) - tau * log pi_c``.

    The shift is taken relative to the smallest log-prior, so uniform priors
    give an all-zero shift and reproduce the unadjusted argmax exactly.
    """
    pri = np.asarray(priors, dtype=np.float64)
    if np.any(pri <= 0):
        raise ValueError("priors must be positive")
    if abs(pri.sum() - 1.0) > 1e-9:
        raise ValueError("priors must sum to 1")
    lp = np.log(pri)
    shift = tau * (lp - lp.min())
    return np.argmax(np.asarray(scores, dtype=np.float64) - shift, axis=1)
