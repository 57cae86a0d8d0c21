"""Hessian Surgery: class-error weights, the constrained coefficient solver,
Adam-style amplitude control, rollback and the iterative loop, plus the
sequential deflated variant."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from . import models
from .data import Dataset, stratified_batch, uniform_batch
from .lanczos import SpikeBasis, top_eigenpairs
from .models import ClassAccuracy, MlpSpec, class_sigma
from .operators import deflate, model_oracle, orthonormalize
from .sensitivity import noise_floor, sensitivity_from_fn
from .vecspace import as_vector, derive_seed

log = logging.getLogger(__name__)

GLOBAL_L2, PER_SPIKE_BOX = "global_l2", "per_spike_box"


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class WeightConfig:
    p_exponent: float = 1.0
    protect_threshold: float = 0.85
    protect_floor: float = -0.01


def class_weights(accuracies: Any, p: float) -> tuple[np.ndarray, bool]:
    """Error-power weights ``e_j^p / sum e^p``; second value flags a perfect classifier."""
    a = np.asarray(accuracies, dtype=np.float64)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    if p < 0:
        raise ValueError("p must be non-negative")
    e = 1.0 - a
    w = np.power(e, p)  # 0**0 == 1
    total = w.sum()
    if total == 0.0:
        return np.full(a.size, 1.0 / a.size), True
    return w / total, False


def recommend_p(accuracies: Any, target: str = "min_sigma") -> float:
    if target not in ("min_sigma", "max_worst"):
        raise ValueError(f"unknown target {target!r}")
    e = 1.0 - np.asarray(accuracies, dtype=np.float64)
    e = e[e > 0]
    if e.size < 2:
        warnings.warn("fewer than two classes with non-zero error; using p = 1", RuntimeWarning)
        return 1.0
    severe = e.max() / e.min() >= 5.0
    if target == "min_sigma":
        return 0.5 if severe else 2.0
    return 0.0 if severe else 1.0


# ----------------------------------------------------------------- budget

@dataclass(frozen=True)
class BudgetConfig:
    mode: str = GLOBAL_L2
    alpha_max: float = 0.02
    eigenvalues: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in (GLOBAL_L2, PER_SPIKE_BOX):
            raise ValueError(f"unknown budget mode {self.mode!r}")
        if not self.alpha_max > 0:
            raise ValueError("alpha_max must be positive")

    def with_alpha(self, alpha_max: float, eigenvalues: Sequence[float] | None = None) -> "BudgetConfig":
        eig = self.eigenvalues if eigenvalues is None else tuple(float(x) for x in eigenvalues)
        return replace(self, alpha_max=float(alpha_max), eigenvalues=eig)


def per_spike_bounds(eigenvalues: Any, alpha_max: float) -> np.ndarray:
    """Box half-widths ``alpha_max * sqrt(lam_min / lam_i)``; non-positive spikes get 0."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    pos = lam > 0
    if not np.all(pos):
        warnings.warn(f"excluding {int((~pos).sum())} non-positive spike(s) from the box budget",
                      RuntimeWarning)
    if not np.any(pos):
        return np.zeros(lam.size)
    lam_min = lam[pos].min()
    out = np.zeros(lam.size)
    out[pos] = alpha_max * np.sqrt(lam_min / lam[pos])
    return out


def deflation_alpha(alpha_first: float, lam_first: float, lam_phase: float) -> float:
    """Inter-phase amplitude ``alpha^(1) sqrt(lam^(1) / lam^(l))``."""
    if lam_first <= 0 or lam_phase <= 0:
        raise ValueError("phase eigenvalues must be positive")
    return alpha_first * math.sqrt(lam_first / lam_phase)


# ----------------------------------------------------------------- solver

@dataclass
class Solution:
    alpha: np.ndarray
    objective: float
    feasible: bool
    method: str


def _constraints(S: np.ndarray, acc: np.ndarray, cfg: WeightConfig) -> tuple[np.ndarray, np.ndarray]:
    protected = np.flatnonzero(acc > cfg.protect_threshold)
    A = S[:, protected].T  # rows: (S^T alpha)_j for protected j
    f = np.full(protected.size, cfg.protect_floor)
    return A, f


def check_feasible(alpha: np.ndarray, S: Any, accuracies: Any, budget: BudgetConfig,
                   protect: WeightConfig) -> bool:
    """Exact (no tolerance) feasibility of ``alpha``."""
    S = np.atleast_2d(np.asarray(getattr(S, "S", S), dtype=np.float64))
    A, f = _constraints(S, np.asarray(accuracies, dtype=np.float64), protect)
    if budget.mode == GLOBAL_L2:
        inside = float(np.linalg.norm(alpha)) <= budget.alpha_max
    else:
        inside = bool(np.all(np.abs(alpha) <= per_spike_bounds(budget.eigenvalues, budget.alpha_max)))
    return inside and bool(np.all(A @ alpha >= f))


def _ball_candidates(c: np.ndarray, A: np.ndarray, f: np.ndarray, r: float) -> list[np.ndarray]:
    # KKT enumeration: for every active set E the maximizer over
    # {alpha : A_E alpha = f_E, |alpha| <= r} is a candidate.
    K = c.size
    out = []
    for size in range(0, min(A.shape[0], K) + 1):
        for E in itertools.combinations(range(A.shape[0]), size):
            if size:
                AE, fE = A[list(E)], f[list(E)]
                a0, _, rank, _ = np.linalg.lstsq(AE, fE, rcond=None)
                if rank < size:
                    continue
                N = null_space(AE)
            else:
                a0, N = np.zeros(K), np.eye(K)
            slack = r * r - float(a0 @ a0)
            if slack < -1e-12 * r * r:
                continue
            if N.shape[1] == 0:
                out.append(a0)
                continue
            g = N.T @ c
            gn = np.linalg.norm(g)
            if gn <= 1e-14 * max(1.0, np.linalg.norm(c)):
                out.append(a0)
            else:
                out.append(a0 + math.sqrt(max(slack, 0.0)) * (N @ g) / gn)
    return out


def _dykstra_ball(y: np.ndarray, A: np.ndarray, f: np.ndarray, r: float, iters: int = 500) -> np.ndarray:
    sets = A.shape[0] + 1
    incr = np.zeros((sets, y.size))
    x = y.copy()
    for _ in range(iters):
        prev = x
        for s in range(sets):
            z = x + incr[s]
            if s < A.shape[0]:
                a, viol = A[s], f[s] - A[s] @ z
                nn = a @ a
                x = z + (viol / nn) * a if viol > 0 and nn > 0 else z
            else:
                n = np.linalg.norm(z)
                x = z * (r / n) if n > r else z
            incr[s] = z - x
        if np.linalg.norm(x - prev) < 1e-13 * max(r, 1e-300):
            break
    return x


def _projected_gradient(c: np.ndarray, A: np.ndarray, f: np.ndarray, r: float, iters: int = 1000) -> np.ndarray:
    # fallback when the active-set enumeration would be too large
    x = np.zeros(c.size)
    cn = np.linalg.norm(c)
    if cn == 0:
        return x
    step = r / cn
    for k in range(iters):
        x = _dykstra_ball(x + step / math.sqrt(k + 1) * c, A, f, r)
    return x


def _restore_feasible(alpha: np.ndarray, A: np.ndarray, f: np.ndarray, inside: Callable[[np.ndarray], bool]) -> np.ndarray:
    """Shrink toward 0 (always feasible since floors are <= 0) until exactly feasible."""
    a = alpha.copy()
    for _ in range(200):
        if inside(a) and np.all(A @ a >= f):
            return a
        t = 1.0
        lhs = A @ a
        bad = lhs < f
        if np.any(bad):
            t = min(t, float(np.min(f[bad] / lhs[bad])))
        a = a * min(t, 1.0) * (1.0 - 1e-12)
    return np.zeros_like(a)


MAX_ACTIVE_SETS = 20000


def solve_coefficients(S: Any, accuracies: Any, weights: Any, budget: BudgetConfig,
                       protect: WeightConfig = WeightConfig()) -> Solution:
    """Maximize ``(S w)^T alpha`` under the budget and protection floors."""
    S = np.atleast_2d(np.asarray(getattr(S, "S", S), dtype=np.float64))
    acc = np.asarray(accuracies, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(S)):
        raise ValueError("sensitivity matrix has non-finite entries")
    if protect.protect_floor > 0:
        raise ValueError("protect_floor must be <= 0")
    K = S.shape[0]
    c = S @ w
    A, f = _constraints(S, acc, protect)
    r = budget.alpha_max
    if not np.any(c):
        # flat objective: every feasible point is optimal, so do not move (floors are <= 0)
        return Solution(np.zeros(K), 0.0, True, "zero-objective")

    if budget.mode == GLOBAL_L2:
        def inside(a: np.ndarray) -> bool:
            return float(np.linalg.norm(a)) <= r

        n_sets = sum(math.comb(A.shape[0], s) for s in range(min(A.shape[0], K) + 1))
        if n_sets <= MAX_ACTIVE_SETS:
            method = "active-set"
            cands = [a for a in _ball_candidates(c, A, f, r)
                     if np.linalg.norm(a) <= r * (1 + 1e-9) and np.all(A @ a >= f - 1e-9 * max(r, 1e-12))]
            best = max(cands, key=lambda a: float(c @ a)) if cands else None
        else:
            method = "projected-gradient"
            best = _projected_gradient(c, A, f, r)
            if np.any(A @ best < f - 1e-9 * r):
                best = None
    else:
        bounds = per_spike_bounds(budget.eigenvalues, r)
        if bounds.size != K:
            raise ValueError("box budget needs one eigenvalue per spike")

        def inside(a: np.ndarray) -> bool:
            return bool(np.all(np.abs(a) <= bounds))

        method = "linprog"
        res = linprog(-c, A_ub=-A if A.size else None, b_ub=-f if A.size else None,
                      bounds=[(-b, b) for b in bounds], method="highs")
        best = np.clip(res.x, -bounds, bounds) if res.status == 0 else None

    if best is None:
        return Solution(np.zeros(K), 0.0, False, method)
    if budget.mode == GLOBAL_L2:
        n = np.linalg.norm(best)
        if n > r:
            best = best * (r / n)
    alpha = _restore_feasible(best, A, f, inside)
    return Solution(alpha, float(c @ alpha), True, method)


# ------------------------------------------------------- amplitude control

@dataclass
class AmplitudeController:
    """Adam-moment SNR controller for the perturbation amplitude.

    ``anchor="initial"`` interpolates between ``alpha_min`` and the initial
    amplitude every step. ``anchor="previous"`` interpolates toward the
    previously emitted amplitude instead, which is the form that reduces to
    multiplicative decay when both betas vanish.
    """

    T: int
    alpha_min: float
    alpha_max0: float
    beta1: float | None = None
    beta2: float | None = None
    eps: float = 1e-8
    anchor: str = "initial"
    m: float = 0.0
    v: float = 0.0
    t: int = 0
    current: float | None = None
    snr: float = 0.0

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 <= self.alpha_min <= self.alpha_max0:
            raise ValueError("need 0 <= alpha_min <= alpha_max0")
        if self.anchor not in ("initial", "previous"):
            raise ValueError(f"unknown anchor {self.anchor!r}")
        if self.beta1 is None:
            self.beta1 = max(0.0, 1.0 - 4.0 / self.T)
        if self.beta2 is None:
            self.beta2 = max(0.0, 1.0 - 1.0 / self.T)
        if self.current is None:
            self.current = self.alpha_max0

    def update(self, g: float) -> float:
        g = float(g)
        self.t += 1
        # a zero beta must drop the old moment outright: 0 * inf is NaN
        self.m = (self.beta1 * self.m if self.beta1 else 0.0) + (1.0 - self.beta1) * g
        self.v = (self.beta2 * self.v if self.beta2 else 0.0) + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        snr = m_hat / (math.sqrt(v_hat) + self.eps)
        self.snr = snr if math.isfinite(snr) else 0.0  # overflowed moments carry no direction
        top = self.alpha_max0 if self.anchor == "initial" else self.current
        frac = (1.0 + math.tanh(5.0 * self.snr)) / 2.0
        alpha = (1.0 - frac) * self.alpha_min + frac * top  # exact midpoint at zero SNR
        self.current = min(max(alpha, self.alpha_min), self.alpha_max0)
        return self.current

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in
                ("T", "alpha_min", "alpha_max0", "beta1", "beta2", "eps", "anchor", "m", "v", "t", "current", "snr")}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AmplitudeController":
        return cls(**d)


def amplitude_update(controller: AmplitudeController, g: float) -> float:
    return controller.update(g)


# ------------------------------------------------------------------- loop

@dataclass(frozen=True)
class SurgeryConfig:
    T: int = 10
    K: int = 3
    lanczos_m: int = 10
    hvp_batch: int = 256
    hvp_sampling: str = "uniform"  # or "stratified" (per-class cap)
    budget_mode: str = GLOBAL_L2
    alpha_max0: float = 0.02
    alpha_min: float = 0.002
    p_exponent: float | str = 1.0  # float or "auto:min_sigma" / "auto:max_worst"
    protect_threshold: float = 0.85
    protect_floor: float = -0.01
    sigma_guard: float = 0.005
    drop_guard: float = 0.07
    seed: int = 0

    def weight_config(self) -> WeightConfig:
        return WeightConfig(0.0 if isinstance(self.p_exponent, str) else float(self.p_exponent),
                            self.protect_threshold, self.protect_floor)

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SurgeryConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown surgery keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SurgeryContext:
    """What one iteration needs from the outside world.

    ``accuracy`` maps parameters to per-class accuracy on the sensitivity
    split; ``spikes`` returns the spike basis at ``theta`` for iteration ``t``.
    """

    accuracy: Callable[[np.ndarray], np.ndarray]
    spikes: Callable[[np.ndarray, int], SpikeBasis]
    counts: np.ndarray


@dataclass
class SurgeryState:
    theta: np.ndarray
    acc: np.ndarray
    controller: AmplitudeController
    p_exponent: float
    t: int = 0
    log: list[dict[str, Any]] = field(default_factory=list)

    @property
    def sigma(self) -> float:
        return class_sigma(self.acc)

    def to_dict(self) -> dict[str, Any]:
        """Everything except ``theta`` (stored separately as a vector file)."""
        return {
            "t": self.t,
            "acc": [float(a) for a in self.acc],
            "p_exponent": self.p_exponent,
            "controller": self.controller.to_dict(),
            "log": self.log,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], theta: np.ndarray) -> "SurgeryState":
        return cls(as_vector(theta).copy(), np.asarray(d["acc"], dtype=np.float64),
                   AmplitudeController.from_dict(d["controller"]), float(d["p_exponent"]),
                   int(d["t"]), list(d["log"]))


def resolve_p(config: SurgeryConfig, acc: np.ndarray) -> float:
    p = config.p_exponent
    if isinstance(p, str):
        if not p.startswith("auto"):
            raise ValueError(f"bad p_exponent {p!r}")
        target = p.split(":", 1)[1] if ":" in p else "min_sigma"
        return recommend_p(acc, target)
    return float(p)


def init_state(theta0: Any, acc0: np.ndarray, config: SurgeryConfig,
               alpha_max0: float | None = None, alpha_min: float | None = None) -> SurgeryState:
    a0 = config.alpha_max0 if alpha_max0 is None else alpha_max0
    amin = config.alpha_min if alpha_min is None else alpha_min
    ctrl = AmplitudeController(max(config.T, 1), amin, a0)
    return SurgeryState(as_vector(theta0).copy(), np.asarray(acc0, dtype=np.float64), ctrl,
                        resolve_p(config, acc0))


def model_context(spec: MlpSpec, data: Dataset, config: SurgeryConfig,
                  deflate_with: np.ndarray | None = None) -> SurgeryContext:
    sens = data.split("sensitivity")
    Q = orthonormalize(deflate_with) if deflate_with is not None and len(deflate_with) else None

    def accuracy(theta: np.ndarray) -> np.ndarray:
        return models.per_class_accuracy(spec, theta, sens).per_class

    def spikes(theta: np.ndarray, t: int) -> SpikeBasis:
        bseed = derive_seed(config.seed, "hvp-batch", t)
        if config.hvp_sampling == "stratified":
            batch = stratified_batch(data, max(1, config.hvp_batch // data.n_classes), bseed)
        else:
            batch = uniform_batch(data, config.hvp_batch, bseed)
        oracle = model_oracle(spec, theta, batch, {"batch_seed": bseed, "iteration": t})
        if Q is not None:
            oracle = deflate(oracle, Q)
        return top_eigenpairs(oracle, config.K, config.lanczos_m, seed=derive_seed(config.seed, "lanczos", t),
                              orthogonal_to=Q)

    return SurgeryContext(accuracy, spikes, np.bincount(sens.y, minlength=data.n_classes))


def surgery_step(state: SurgeryState, spec: MlpSpec | None, data: Dataset | None, config: SurgeryConfig,
                 ctx: SurgeryContext | None = None) -> SurgeryState:
    """One iteration: basis, sensitivity, solve, apply, evaluate, accept or roll back."""
    if ctx is None:
        ctx = model_context(spec, data, config)
    t = state.t + 1
    theta_prev = state.theta
    acc_prev = state.acc
    sigma_prev = class_sigma(acc_prev)
    eps = float(state.controller.current)

    basis = ctx.spikes(theta_prev, t)
    keep = basis.eigenvalues > 0
    basis = SpikeBasis(basis.eigenvalues[keep], basis.vectors[keep], basis.source, basis.orth_error)
    S = sensitivity_from_fn(ctx.accuracy, theta_prev, basis.vectors, eps) if len(basis) else np.zeros((0, acc_prev.size))
    weights, perfect = class_weights(acc_prev, state.p_exponent)
    wcfg = replace(config.weight_config(), p_exponent=state.p_exponent)
    budget = BudgetConfig(config.budget_mode, eps, tuple(basis.eigenvalues))
    if len(basis):
        sol = solve_coefficients(S, acc_prev, weights, budget, wcfg)
    else:
        sol = Solution(np.zeros(0), 0.0, True, "empty-basis")

    rec: dict[str, Any] = {
        "t": t,
        "alpha_max": eps,
        "eigenvalues": [float(x) for x in basis.eigenvalues],
        "alpha": [float(a) for a in sol.alpha],
        "objective": sol.objective,
        "solver": sol.method,
        "perfect": perfect,
        "sigma_prev": sigma_prev,
        "noise_floor": noise_floor(eps, ctx.counts),
        "basis": basis.source,
    }
    if not sol.feasible:
        g = 0.0
        rec.update(status="skipped", accepted=False, acc=[float(a) for a in acc_prev], sigma=sigma_prev, delta_max=0.0)
        new_theta, new_acc = theta_prev, acc_prev
    else:
        if np.any(sol.alpha != 0):
            cand = theta_prev + sol.alpha @ basis.vectors
        else:
            cand = theta_prev.copy()
        a_cand = np.asarray(ctx.accuracy(cand), dtype=np.float64)
        delta_max = float(np.max(acc_prev - a_cand))
        sigma_cand = class_sigma(a_cand)
        if sigma_cand > sigma_prev + config.sigma_guard or delta_max > config.drop_guard:
            g = -delta_max
            new_theta, new_acc = theta_prev, acc_prev
            rec.update(status="rollback", accepted=False)
        else:
            g = sigma_prev - sigma_cand
            new_theta, new_acc = cand, a_cand
            rec.update(status="accepted", accepted=True)
        rec.update(acc=[float(a) for a in new_acc], candidate_acc=[float(a) for a in a_cand],
                   sigma=class_sigma(new_acc), delta_max=delta_max)
    alpha_next = state.controller.update(g)
    rec.update(g=g, snr=state.controller.snr, alpha_max_next=alpha_next)
    log.info("surgery t=%d %s sigma=%.4f alpha_max=%.4g", t, rec["status"], rec["sigma"], eps)
    return SurgeryState(new_theta, new_acc, state.controller, state.p_exponent, t, state.log + [rec])


@dataclass
class SurgeryReport:
    state: SurgeryState
    heldout_before: ClassAccuracy
    heldout_after: ClassAccuracy
    sensitivity_before: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {
            "iterations": self.state.log,
            "sensitivity_before": [float(a) for a in self.sensitivity_before],
            "heldout_before": self.heldout_before.to_dict(),
            "heldout_after": self.heldout_after.to_dict(),
        }


def run_surgery(spec: MlpSpec, theta0: Any, data: Dataset, config: SurgeryConfig,
                state: SurgeryState | None = None, on_step: Callable[[SurgeryState], None] | None = None,
                stop_after: int | None = None) -> tuple[np.ndarray, SurgeryReport]:
    """Full loop. Heldout is only touched before and after the loop."""
    theta0 = as_vector(theta0)
    held = data.split("heldout")
    before = models.per_class_accuracy(spec, theta0, held)
    ctx = model_context(spec, data, config)
    with data.forbid("heldout"):
        acc0 = ctx.accuracy(theta0)
        if state is None:
            state = init_state(theta0, acc0, config)
        done = 0
        while state.t < config.T:
            if stop_after is not None and done >= stop_after:
                break
            state = surgery_step(state, spec, data, config, ctx)
            done += 1
            if on_step is not None:
                on_step(state)
    after = models.per_class_accuracy(spec, state.theta, held)
    return state.theta, SurgeryReport(state, before, after, acc0)


# -------------------------------------------------------------- deflation

@dataclass(frozen=True)
class DeflationConfig:
    phases: int = 2
    spikes_per_phase: int = 3
    iters_per_phase: int = 5
    alpha_first: float = 0.02
    max_vectors: int = 64


@dataclass
class PhaseRecord:
    phase: int
    lam_max: float
    alpha_max: float
    eigenvalues: list[float]
    cross_correlation: float
    sigma_before: float
    sigma_after: float
    iterations: list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def run_deflated_surgery(spec: MlpSpec, theta0: Any, data: Dataset, config: SurgeryConfig,
                         dcfg: DeflationConfig) -> tuple[np.ndarray, list[PhaseRecord]]:
    """Phases of surgery, each on the operator deflated by all earlier phases' bases."""
    if dcfg.phases < 1:
        raise ValueError("need at least one phase")
    theta = as_vector(theta0).copy()
    Q_prev = np.zeros((0, theta.size))
    bases: list[np.ndarray] = []
    phases: list[PhaseRecord] = []
    lam_first = None
    with data.forbid("heldout"):
        for ell in range(1, dcfg.phases + 1):
            if Q_prev.shape[0] + dcfg.spikes_per_phase > dcfg.max_vectors:
                raise MemoryError(f"deflation basis would exceed {dcfg.max_vectors} stored vectors")
            pcfg = replace(config, K=dcfg.spikes_per_phase, T=dcfg.iters_per_phase,
                           seed=derive_seed(config.seed, "phase", ell))
            ctx = model_context(spec, data, pcfg, deflate_with=Q_prev if len(Q_prev) else None)
            basis = ctx.spikes(theta, 0)
            lam = float(basis.eigenvalues[0])
            if lam_first is None:
                lam_first = lam
            alpha = deflation_alpha(dcfg.alpha_first, lam_first, lam) if ell > 1 else dcfg.alpha_first
            scale = alpha / dcfg.alpha_first
            acc0 = ctx.accuracy(theta)
            state = init_state(theta, acc0, pcfg, alpha, config.alpha_min * scale)
            while state.t < pcfg.T:
                state = surgery_step(state, spec, data, pcfg, ctx)
            theta = state.theta
            Qn = orthonormalize(basis.vectors)
            cross = max((float(np.max(np.abs(Qn @ B.T))) for B in bases), default=0.0)
            bases.append(Qn)
            Q_prev = np.vstack([Q_prev, Qn])
            phases.append(PhaseRecord(ell, lam, alpha, [float(x) for x in basis.eigenvalues], cross,
                                      class_sigma(acc0), state.sigma, state.log))
    return theta, phases


# ---------------------------------------------------------------- deciles

def decile_report(before: Any, after: Any, groups: int = 10) -> list[dict[str, Any]]:
    """Mean accuracy change per equal-count group of classes ranked by baseline accuracy."""
    b = np.asarray(getattr(before, "per_class", before), dtype=np.float64)
    a = np.asarray(getattr(after, "per_class", after), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("before and after must cover the same classes")
    if groups > b.size:
        warnings.warn(f"{b.size} classes cannot fill {groups} groups; collapsing to {b.size}", RuntimeWarning)
        groups = b.size
    order = np.argsort(b, kind="stable")
    rows = []
    for g, idx in enumerate(np.array_split(order, groups)):
        rows.append({
            "group": g + 1,
            "classes": [int(i) for i in idx],
            "baseline_mean": float(b[idx].mean()),
            "delta_mean": float((a[idx] - b[idx]).mean()),
        })
    return rows
