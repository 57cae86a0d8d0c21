"""Validation harnesses: directed bulk walk, linearization sweep, eigenspace
stability study and the rebalancing-baseline comparison."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import models
from .data import Dataset, nested_batches
from .lanczos import SpikeBasis, StabilityReport, subspace_stability, top_eigenpairs
from .models import Batch, ClassAccuracy, LossSpec, MlpSpec, TrainConfig
from .operators import model_oracle, time_apply
from .surgery import BudgetConfig, SurgeryConfig, WeightConfig, class_weights, run_surgery, solve_coefficients
from .vecspace import Rng, as_vector, derive_seed, gram_schmidt_residual

log = logging.getLogger(__name__)


# --------------------------------------------------------------- bulk walk

@dataclass
class WalkStep:
    step: int
    loss: float
    global_acc: float
    per_class: list[float]
    lam_max: float
    wall: bool
    spike_overlap: float  # max |q_i^T d| at projection time
    displacement: float  # |theta_t - theta_0| / |theta_0|


@dataclass
class BulkWalkLog:
    eps: float
    start: WalkStep
    steps: list[WalkStep] = field(default_factory=list)
    history: int = 0
    absorbed: bool = False

    @property
    def final(self) -> WalkStep:
        return self.steps[-1] if self.steps else self.start

    def max_overlap(self) -> float:
        return max((s.spike_overlap for s in self.steps), default=0.0)

    def to_rows(self) -> list[dict[str, Any]]:
        return [dict(s.__dict__) for s in [self.start, *self.steps]]


def _stack_orthonormal(*blocks: np.ndarray) -> np.ndarray:
    rows = [b for b in blocks if b.size]
    if not rows:
        return np.zeros((0, 0))
    M = np.vstack(rows)
    q, r = np.linalg.qr(M.T)
    keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, float(np.max(np.abs(np.diag(r)))))
    return q[:, keep].T


def _project_out(d: np.ndarray, Q: np.ndarray) -> np.ndarray:
    if Q.size == 0:
        return d
    return gram_schmidt_residual(d, Q)


def eps_for_displacement(theta: Any, steps: int, relative: float) -> float:
    """Unit-direction step size whose straight-line walk reaches ``relative * |theta|``."""
    return relative * float(np.linalg.norm(as_vector(theta))) / steps


def bulk_walk(spec: MlpSpec, theta: Any, batch: Batch, basis: SpikeBasis | Callable[[np.ndarray, int], SpikeBasis],
              steps: int, eps: float, wall_tol: float = 0.5, seed: int = 0, history_cap: int = 64,
              lam_fn: Callable[[np.ndarray], float] | None = None) -> BulkWalkLog:
    """Walk along unit directions kept orthogonal to the spike subspace.

    ``basis`` is either a fixed SpikeBasis or ``spikes(theta, t)`` recomputed
    every step. Loss and accuracies are measured on ``batch``.
    """
    theta0 = as_vector(theta).copy()
    th = theta0.copy()
    n0 = float(np.linalg.norm(theta0))
    rng = Rng(seed)

    def measure(k: int, th: np.ndarray, wall: bool, overlap: float) -> WalkStep:
        loss, Z = models.forward(spec, th, batch)
        acc = models.accuracy_from_predictions(np.argmax(Z, axis=1), batch.y, spec.n_classes)
        lam = lam_fn(th) if lam_fn is not None else float("nan")
        disp = float(np.linalg.norm(th - theta0)) / n0 if n0 > 0 else 0.0
        return WalkStep(k, loss, acc.global_acc, [float(a) for a in acc.per_class], lam, wall, overlap, disp)

    out = BulkWalkLog(eps, measure(0, th, False, 0.0))
    history = np.zeros((0, th.size))
    d: np.ndarray | None = None
    for t in range(1, steps + 1):
        B = basis(th, t) if callable(basis) else basis
        Q = np.atleast_2d(B.vectors) if len(B) else np.zeros((0, th.size))
        wall = False
        if d is not None:
            dp = _project_out(d, Q)
            if np.linalg.norm(dp) < wall_tol:
                wall = True
                history = np.vstack([history, d])[-history_cap:]
                d = None
            else:
                d = dp / np.linalg.norm(dp)
        if d is None:
            z = rng.spawn("direction", t).normal(th.size)
            z = _project_out(z, _stack_orthonormal(Q, history))
            zn = float(np.linalg.norm(z))
            if zn <= 1e-8 * math.sqrt(th.size):
                # every direction is absorbed by the spike/history span
                out.steps.append(measure(t, th, True, 0.0))
                out.absorbed = True
                break
            d = z / zn
            wall = wall or t > 1
        overlap = float(np.max(np.abs(Q @ d))) if Q.shape[0] else 0.0
        th = th + eps * d
        out.steps.append(measure(t, th, wall, overlap))
    out.history = history.shape[0]
    return out


# ------------------------------------------------------ linearization sweep

@dataclass
class SweepPoint:
    alpha_max: float
    alpha_norm: float
    predicted: float
    measured: float
    error: float


@dataclass
class PowerFit:
    c: float
    b: float
    d: float
    r2: float
    converged: bool = True


@dataclass
class LinearizationSweepLog:
    points: list[SweepPoint]
    additive: PowerFit | None
    pure_power: PowerFit | None
    correlation: float

    def to_rows(self) -> list[dict[str, Any]]:
        return [dict(p.__dict__) for p in self.points]


def sweep_grid(lo: float, hi: float, n: int = 38) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def _r2(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")


def fit_error_curve(x: Any, y: Any) -> tuple[PowerFit | None, PowerFit | None]:
    """Additive ``c + b x^d`` and pure ``b x^d`` least-squares fits."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = x > 0
    x, y = x[m], y[m]
    if x.size < 4:
        return None, None
    b0 = max(float(y.max() / x.max()), 1e-12)

    def additive(x, c, b, d):
        return c + b * x ** d

    def power(x, b, d):
        return b * x ** d

    fits = []
    for f, p0, lo, hi in ((additive, (max(y.min(), 0.0), b0, 1.0), (0, 0, 0.05), (np.inf, np.inf, 5.0)),
                          (power, (b0, 1.0), (0, 0.05), (np.inf, 5.0))):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                popt, _ = curve_fit(f, x, y, p0=p0, bounds=(lo, hi), maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            log.warning("fit did not converge: %s", exc)
            fits.append(None)
            continue
        r2 = _r2(y, f(x, *popt))
        if len(popt) == 3:
            fits.append(PowerFit(float(popt[0]), float(popt[1]), float(popt[2]), r2))
        else:
            fits.append(PowerFit(0.0, float(popt[0]), float(popt[1]), r2))
    return fits[0], fits[1]


def linearization_sweep(acc_fn: Callable[[np.ndarray], np.ndarray], theta: Any, vectors: np.ndarray, S: Any,
                        acc0: Any, grid: Sequence[float], p_exponent: float = 1.0,
                        protect: WeightConfig = WeightConfig()) -> LinearizationSweepLog:
    """Predicted ``S^T alpha*`` against measured accuracy change over an amplitude grid.

    ``S`` is computed once by the caller and reused at every point; each
    point is solved, applied to a copy of ``theta``, measured and discarded.
    """
    theta = as_vector(theta)
    S = np.atleast_2d(np.asarray(getattr(S, "S", S), dtype=np.float64))
    V = np.atleast_2d(vectors)
    acc0 = np.asarray(acc0, dtype=np.float64)
    w, _ = class_weights(acc0, p_exponent)
    pts = []
    for a_max in grid:
        if a_max == 0:
            alpha = np.zeros(S.shape[0])
        else:
            alpha = solve_coefficients(S, acc0, w, BudgetConfig(alpha_max=float(a_max)), protect).alpha
        pred = S.T @ alpha
        meas = np.asarray(acc_fn(theta + alpha @ V), dtype=np.float64) - acc0 if np.any(alpha) else np.zeros_like(acc0)
        pts.append(SweepPoint(float(a_max), float(np.linalg.norm(alpha)), float(np.linalg.norm(pred)),
                              float(np.linalg.norm(meas)), float(np.linalg.norm(pred - meas))))
    xs = np.array([p.alpha_norm for p in pts])
    add, pure = fit_error_curve(xs, [p.error for p in pts])
    pr = np.array([p.predicted for p in pts])
    me = np.array([p.measured for p in pts])
    corr = float(np.corrcoef(pr, me)[0, 1]) if pr.std() > 0 and me.std() > 0 else float("nan")
    return LinearizationSweepLog(pts, add, pure, corr)


# ---------------------------------------------------------- stability study

@dataclass
class StabilityRow:
    n: int
    eigenvalues: list[float]
    report: StabilityReport
    hvp_seconds: float
    lanczos_seconds: float


def stability_study(spec: MlpSpec, theta: Any, data: Dataset, batch_sizes: Sequence[int], K: int = 3,
                    m: int = 10, seed: int = 0, lanczos_seed: int = 0, ks: Sequence[int] | None = None,
                    repeats: int = 5, shuffle_labels: bool = False) -> list[StabilityRow]:
    """Compare spike bases from nested batches against the largest batch.

    The Lanczos start vector is shared across batch sizes so differences
    come from the batch only.
    """
    sizes = sorted(int(n) for n in batch_sizes)
    batches = nested_batches(data, sizes, seed)
    ks = list(ks) if ks is not None else list(range(1, K + 1))

    def basis_for(b: Batch) -> tuple[SpikeBasis, float, float]:
        orc = model_oracle(spec, theta, b)
        hvp_t = time_apply(orc, repeats=repeats, seed=seed)
        best = float("inf")
        for _ in range(max(1, repeats // 2)):
            t0 = time.perf_counter()
            B = top_eigenpairs(orc, K, m, seed=lanczos_seed)
            best = min(best, time.perf_counter() - t0)
        return B, hvp_t, best

    ref, _, _ = basis_for(batches[-1])
    rows = []
    for n, b in zip(sizes, batches):
        if shuffle_labels:
            b = Batch(b.X, b.y[Rng(derive_seed(seed, "shuffle", n)).permutation(len(b))])
        B, th, tl = basis_for(b)
        rows.append(StabilityRow(n, [float(x) for x in B.eigenvalues], subspace_stability(B, ref, ks), th, tl))
    return rows


# ---------------------------------------------------------------- baselines

@dataclass
class BaselineConfig:
    finetune_epochs: int = 10
    focal_gamma: float = 2.0
    tau_grid: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 2.0, 9), 4))
    logit_tau: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    surgery: SurgeryConfig = field(default_factory=SurgeryConfig)


@dataclass
class BaselineRow:
    method: str
    acc: ClassAccuracy
    delta_sigma: float
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        order = np.argsort(self.acc.per_class, kind="stable")
        return {
            "method": self.method,
            "global": self.acc.global_acc,
            "sigma": self.acc.sigma,
            "delta_sigma": self.delta_sigma,
            "weakest": [[int(c), float(self.acc.per_class[c])] for c in order[:2]],
            "note": self.note,
        }


def inverse_frequency_weights(freqs: Any) -> np.ndarray:
    f = np.asarray(freqs, dtype=np.float64)
    w = 1.0 / f
    return w / w.mean()


def finetune(spec: MlpSpec, theta: Any, data: Dataset, loss: LossSpec, cfg: TrainConfig, epochs: int) -> np.ndarray:
    th, _ = models.train(spec.with_loss(loss), data.split("train"), replace(cfg, epochs=epochs), theta0=as_vector(theta).copy())
    return th


def compare_baselines(spec: MlpSpec, theta0: Any, data: Dataset, cfg: BaselineConfig = BaselineConfig()) -> list[BaselineRow]:
    """Every method is fitted or selected without heldout; heldout scores the rows."""
    theta0 = as_vector(theta0)
    held = data.split("heldout")
    rows: list[BaselineRow] = []

    def score(method: str, th: np.ndarray | None = None, pred: np.ndarray | None = None, note: str = "") -> None:
        if pred is None:
            pred = models.predict(spec, th, held)
        acc = models.accuracy_from_predictions(pred, held.y, spec.n_classes)
        base = rows[0].acc.sigma if rows else acc.sigma
        rows.append(BaselineRow(method, acc, acc.sigma - base, note))

    score("baseline", theta0)
    with data.forbid("heldout"):
        sens = data.split("sensitivity")
        th_focal = finetune(spec, theta0, data, LossSpec.focal(cfg.focal_gamma), cfg.train, cfg.finetune_epochs)
        th_cw = finetune(spec, theta0, data, LossSpec.weighted(inverse_frequency_weights(data.class_frequencies())),
                         cfg.train, cfg.finetune_epochs)
        best_tau = min(cfg.tau_grid, key=lambda tau: models.per_class_accuracy(
            spec, models.tau_normalize(spec, theta0, tau), sens).sigma)
    score(f"focal(gamma={cfg.focal_gamma:g})", th_focal)
    score("class-weighted", th_cw)
    score("tau-norm", models.tau_normalize(spec, theta0, best_tau), note=f"tau={best_tau:g} (sensitivity split)")
    priors = data.class_frequencies()
    pred = models.logit_adjust(models.logits(spec, theta0, held), priors, cfg.logit_tau)
    score("logit-adjust", pred=pred, note=f"tau={cfg.logit_tau:g}")
    th_s, _ = run_surgery(spec, theta0, data, cfg.surgery)
    score("surgery", th_s)
    th_fs, _ = run_surgery(spec, th_focal, data, cfg.surgery)
    score("focal+surgery", th_fs)
    return rows
