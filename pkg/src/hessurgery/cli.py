"""Command-line entry point.

Every subcommand writes a report directory holding ``manifest.yaml`` (the
fully resolved config plus inputs), data tables and plot series. Passing an
earlier ``manifest.yaml`` back as ``--config`` replays the run exactly.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 interrupted (resumable with ``surgery --resume``).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import config as C
from . import experiments as E
from . import lanczos as L
from . import models, operators, reports, sensitivity, slq, surgery
from .data import PRESETS, BlobSpec, Dataset, make_blobs, preset, uniform_batch
from .models import LossSpec, MlpSpec, TrainConfig
from .vecspace import derive_seed, load_vector, save_vector

log = logging.getLogger("hessurgery")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INTERRUPTED = 0, 2, 3, 4
MANIFEST = "manifest.yaml"
THETA = "theta.vec"


class Interrupted(Exception):
    pass


# ------------------------------------------------------------ construction

def fixture_spec(cfg: dict[str, Any]) -> BlobSpec:
    fx = cfg["fixture"]
    overrides = {k: v for k, v in fx.items() if k != "preset" and v is not None}
    name = fx.get("preset")
    if name is None:
        C.require(cfg, "fixture.frequencies")
        return BlobSpec.from_dict({**overrides, "seed": cfg["seed"]})
    if name not in PRESETS:
        raise C.ConfigError(f"unknown fixture preset {name!r}; choose from {sorted(PRESETS)}")
    return preset(name, cfg["seed"], **overrides)


def model_spec(cfg: dict[str, Any], fixture: BlobSpec) -> MlpSpec:
    m = cfg["model"]
    hidden = C.require(cfg, "model.hidden")
    kind = m["loss"]
    if kind == "focal":
        loss = LossSpec.focal(float(m["gamma"]))
    elif kind == "weighted_ce":
        loss = LossSpec.weighted(C.require(cfg, "model.class_weights"))
    elif kind == "cross_entropy":
        loss = LossSpec()
    else:
        raise C.ConfigError(f"unknown loss {kind!r}")
    try:
        return MlpSpec((fixture.dim, *[int(h) for h in hidden], len(fixture.frequencies)), m["activation"], loss)
    except ValueError as exc:
        raise C.ConfigError(str(exc)) from None


def train_config(cfg: dict[str, Any]) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(int(t["epochs"]), float(t["lr"]), int(t["batch_size"]), int(cfg["seed"]), t["optimizer"])


def surgery_config(cfg: dict[str, Any]) -> surgery.SurgeryConfig:
    try:
        return surgery.SurgeryConfig.from_dict({**cfg["surgery"], "seed": int(cfg["seed"])})
    except (KeyError, ValueError, TypeError) as exc:
        raise C.ConfigError(str(exc)) from None


class Run:
    """Resolved config, fixture and (optionally) a loaded checkpoint."""

    def __init__(self, args: argparse.Namespace, needs_checkpoint: bool = True):
        layers = []
        self.checkpoint = getattr(args, "checkpoint", None)
        if needs_checkpoint and self.checkpoint is None:
            raise C.ConfigError("--checkpoint is required")
        if self.checkpoint is not None:
            man = Path(self.checkpoint) / MANIFEST
            if not man.exists():
                raise C.ConfigError(f"{self.checkpoint} is not a checkpoint directory (no {MANIFEST})")
            layers.append(C.load_file(man))
        layers += [C.load_file(p) for p in args.config or []]
        self.cfg = C.resolve(layers, args.set or [])
        self.fixture = fixture_spec(self.cfg)
        self.spec = model_spec(self.cfg, self.fixture)
        self._data: Dataset | None = None
        self.theta: np.ndarray | None = None
        if self.checkpoint is not None:
            self.theta = load_vector(Path(self.checkpoint) / THETA).data
            if self.theta.size != self.spec.n_params:
                raise C.ConfigError(f"checkpoint has {self.theta.size} parameters, model config needs {self.spec.n_params}")

    @property
    def data(self) -> Dataset:
        if self._data is None:
            self._data = make_blobs(self.fixture)
        return self._data

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    def manifest(self, command: str, extra: dict[str, Any] | None = None) -> dict[str, Any]:
        doc = {"manifest_version": 1, "command": command, "config": self.cfg,
               "inputs": {"checkpoint": str(self.checkpoint) if self.checkpoint else None}}
        if extra:
            doc.update(extra)
        return doc

    def hvp_batch(self, tag: str) -> models.Batch:
        return uniform_batch(self.data, int(self.cfg["lanczos"]["batch"]), derive_seed(self.seed, tag))

    def oracle(self, tag: str = "spectrum") -> operators.HvpOracle:
        return operators.model_oracle(self.spec, self.theta, self.hvp_batch(tag), {"batch": tag})

    def basis(self, tag: str = "spectrum") -> L.SpikeBasis:
        lz = self.cfg["lanczos"]
        return L.top_eigenpairs(self.oracle(tag), int(lz["k"]), int(lz["m"]), seed=derive_seed(self.seed, "lanczos", tag),
                                tol=float(lz["tol"]))


def out_dir(args: argparse.Namespace) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_timing(out: Path, rows: list[dict[str, Any]]) -> None:
    reports.write_table(out / "timing.tsv", rows)


# ---------------------------------------------------------------- commands

def cmd_train(args: argparse.Namespace) -> int:
    run = Run(args, needs_checkpoint=False)
    out = out_dir(args)
    t0 = time.perf_counter()
    theta, history = models.train(run.spec, run.data.split("train"), train_config(run.cfg))
    with run.data.forbid("heldout"):
        acc = models.per_class_accuracy(run.spec, theta, run.data.split("sensitivity"))
    save_vector(out / THETA, theta, {"model": run.spec.to_dict()})
    reports.write_table(out / "train_log.tsv", [{"epoch": i + 1, "loss": l} for i, l in enumerate(history)])
    reports.write_yaml(out / MANIFEST, run.manifest("train", {
        "fixture": run.data.manifest, "model": run.spec.to_dict(),
        "sensitivity_accuracy": acc.to_dict()}))
    write_timing(out, [{"step": "train", "seconds": time.perf_counter() - t0}])
    print(f"trained {run.spec.n_params} parameters; sensitivity-split sigma {acc.sigma:.4f}")
    return EXIT_OK


def _synthetic(run_cfg: dict[str, Any], seed: int) -> operators.SpikedOperator:
    sy = run_cfg["synthetic"]
    return operators.spiked_operator(operators.SpikedOperatorSpec(
        int(sy["p"]), tuple(float(x) for x in sy["spikes"]), float(sy["bulk_scale"]), seed))


def cmd_spectrum(args: argparse.Namespace) -> int:
    run = Run(args, needs_checkpoint=not args.synthetic)
    out = out_dir(args)
    lz = run.cfg["lanczos"]
    m, k = int(lz["m"]), int(lz["k"])
    if args.synthetic:
        op = _synthetic(run.cfg, run.seed)
        oracle, bulk_median = op.oracle, None
        k = len(op.spec.spike_values)
        planted = op.bulk_median
    else:
        oracle, planted = run.oracle(), None
    t0 = time.perf_counter()
    window = L.top_eigenpairs(oracle, m, m, seed=derive_seed(run.seed, "lanczos", "spectrum"), tol=float(lz["tol"]))
    secs = time.perf_counter() - t0
    eig = window.eigenvalues
    rest = eig[k:]
    bulk_median = planted if planted is not None else (float(np.median(rest)) if rest.size else float("nan"))
    labels = L.classify_spikes(eig, bulk_median, float(lz["gap_factor"]))
    rep = reports.SpectrumReport([float(x) for x in eig], labels, window.orth_error, bulk_median,
                                 float(lz["gap_factor"]), window.source)
    (out / "spectrum.txt").write_text(rep.dumps())
    reports.write_series(out / "eigenvalues.dat", {"index": np.arange(1, eig.size + 1), "eigenvalue": eig},
                         {"bulk_median": bulk_median})
    reports.write_yaml(out / MANIFEST, run.manifest("spectrum", {"synthetic": bool(args.synthetic)}))
    write_timing(out, [{"step": "lanczos", "seconds": secs, "m": m}])
    for lam, lab in zip(eig[: max(k, 1)], labels):
        print(f"{lam:.6g}\t{lab}")
    return EXIT_OK


def cmd_slq(args: argparse.Namespace) -> int:
    run = Run(args, needs_checkpoint=not args.synthetic)
    out = out_dir(args)
    sc = run.cfg["slq"]
    oracle = _synthetic(run.cfg, run.seed).oracle if args.synthetic else run.oracle("slq")
    t0 = time.perf_counter()
    probes = [slq.probe_quadrature(oracle, int(sc["m"]), derive_seed(run.seed, "slq"), i) for i in range(int(sc["k"]))]
    grid = slq.auto_grid(np.concatenate([p.nodes for p in probes]), float(sc["sigma2"]), int(sc["grid_points"]))
    dens = slq.density_from_probes(probes, float(sc["sigma2"]), grid)
    secs = time.perf_counter() - t0
    meta = {"sigma2": sc["sigma2"], "k": sc["k"], "m": sc["m"], "integral": float(np.trapezoid(dens, grid))}
    reports.write_series(out / "density.dat", {"t": grid, "phi": dens}, meta)
    nodes = np.concatenate([p.nodes for p in probes])
    weights = np.concatenate([p.weights for p in probes])
    probe = np.concatenate([np.full(p.nodes.size, i) for i, p in enumerate(probes)])
    reports.write_series(out / "nodes.dat", {"probe": probe, "node": nodes, "weight": weights})
    reports.write_yaml(out / MANIFEST, run.manifest("slq", {"synthetic": bool(args.synthetic)}))
    write_timing(out, [{"step": "slq", "seconds": secs}])
    print(f"density integral {meta['integral']:.6f}")
    return EXIT_OK


def _write_s(out: Path, S: np.ndarray, eig: np.ndarray) -> None:
    rows = [{"spike": i + 1, "eigenvalue": float(eig[i]), **{f"class_{j}": float(S[i, j]) for j in range(S.shape[1])}}
            for i in range(S.shape[0])]
    reports.write_table(out / "S.tsv", rows)
    ii, jj = np.meshgrid(np.arange(S.shape[0]), np.arange(S.shape[1]), indexing="ij")
    reports.write_series(out / "S.dat", {"spike": ii.ravel() + 1, "class": jj.ravel(), "value": S.ravel()})


def read_s(path: str | Path) -> np.ndarray:
    rows = reports.read_table(path)
    cols = sorted((c for c in rows[0] if c.startswith("class_")), key=lambda c: int(c.split("_")[1]))
    return np.array([[r[c] for c in cols] for r in rows], dtype=np.float64)


def cmd_sensitivity(args: argparse.Namespace) -> int:
    run = Run(args)
    out = out_dir(args)
    with run.data.forbid("heldout"):
        basis = run.basis()
        eps = float(run.cfg["sensitivity"]["eps"])
        sm = sensitivity.sensitivity_matrix(run.spec, run.theta, basis, eps, run.data.split("sensitivity"))
    _write_s(out, sm.S, basis.eigenvalues)
    diag = sensitivity.effective_rank(sm) if np.any(sm.S) else None
    reports.write_yaml(out / "rank.yaml", {"noise_floor": sm.noise_floor, "eps": eps,
                                           "rank": diag.to_dict() if diag else None})
    reports.write_yaml(out / MANIFEST, run.manifest("sensitivity"))
    print(np.array2string(sm.S, precision=3))
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    if args.matrix is None and args.singular_values is None:
        raise C.ConfigError("rank needs --matrix or --singular-values")
    out = out_dir(args)
    if args.matrix is not None:
        diag = sensitivity.effective_rank(read_s(args.matrix))
    else:
        diag = sensitivity.rank_from_singular_values([float(x) for x in args.singular_values.split(",")])
    reports.write_yaml(out / "rank.yaml", diag.to_dict())
    reports.write_yaml(out / MANIFEST, {"manifest_version": 1, "command": "rank",
                                        "inputs": {"matrix": args.matrix, "singular_values": args.singular_values}})
    print(f"r_eff {diag.r_eff:.4f}  flatness {diag.flatness:.4f}")
    return EXIT_OK


def _surgery_files(out: Path, spec: MlpSpec, theta: np.ndarray, log_rows: list[dict[str, Any]]) -> None:
    save_vector(out / THETA, theta, {"model": spec.to_dict()})
    rows = [{k: r.get(k) for k in ("t", "status", "sigma_prev", "sigma", "alpha_max", "g", "snr", "delta_max",
                                   "alpha", "acc", "eigenvalues")} for r in log_rows]
    reports.write_table(out / "iterations.tsv", rows)
    reports.write_series(out / "trajectory.dat", {
        "t": [r["t"] for r in log_rows], "sigma": [r["sigma"] for r in log_rows],
        "alpha_max": [r["alpha_max"] for r in log_rows]})


def cmd_surgery(args: argparse.Namespace) -> int:
    out = Path(args.out)
    state = None
    if args.resume:
        man = out / MANIFEST
        if not (out / "state.yaml").exists() or not man.exists():
            raise C.ConfigError(f"nothing to resume in {out}")
        doc = reports.read_yaml(man)
        args.checkpoint = doc["inputs"]["checkpoint"]
        args.config = [str(man)]
        args.set = []
    run = Run(args)
    out = out_dir(args)
    scfg = surgery_config(run.cfg)

    if args.deflated:
        if args.phases is not None:
            run.cfg["deflation"]["phases"] = int(args.phases)
        d = run.cfg["deflation"]
        dcfg = surgery.DeflationConfig(int(d["phases"]), int(d["spikes_per_phase"]), int(d["iters_per_phase"]),
                                       scfg.alpha_max0, int(d["max_vectors"]))
        reports.write_yaml(out / MANIFEST, run.manifest("surgery", {"deflated": True}))
        theta, phases = surgery.run_deflated_surgery(run.spec, run.theta, run.data, scfg, dcfg)
        save_vector(out / THETA, theta, {"model": run.spec.to_dict()})
        reports.write_table(out / "phases.tsv", [
            {k: v for k, v in p.to_dict().items() if k != "iterations"} for p in phases])
        held = run.data.split("heldout")
        before = models.per_class_accuracy(run.spec, run.theta, held)
        after = models.per_class_accuracy(run.spec, theta, held)
        reports.write_yaml(out / "heldout.yaml", {"before": before.to_dict(), "after": after.to_dict()})
        for p in phases:
            print(f"phase {p.phase}: lambda_max {p.lam_max:.4g} alpha {p.alpha_max:.4g} cross {p.cross_correlation:.2e}")
        return EXIT_OK

    if args.resume:
        sdoc = reports.read_yaml(out / "state.yaml")
        state = surgery.SurgeryState.from_dict(sdoc, load_vector(out / "state_theta.vec").data)
    else:
        reports.write_yaml(out / MANIFEST, run.manifest("surgery", {"deflated": False}))

    def on_step(st: surgery.SurgeryState) -> None:
        save_vector(out / "state_theta.vec", st.theta)
        reports.write_yaml(out / "state.yaml", st.to_dict())

    t0 = time.perf_counter()
    theta, rep = surgery.run_surgery(run.spec, run.theta, run.data, scfg, state=state, on_step=on_step,
                                     stop_after=args.stop_after)
    secs = time.perf_counter() - t0
    if rep.state.t < scfg.T:
        print(f"stopped after iteration {rep.state.t} of {scfg.T}; continue with --resume")
        raise Interrupted
    _surgery_files(out, run.spec, theta, rep.state.log)
    reports.write_yaml(out / "heldout.yaml", {"before": rep.heldout_before.to_dict(),
                                              "after": rep.heldout_after.to_dict(),
                                              "sensitivity_before": rep.sensitivity_before})
    reports.write_table(out / "deciles.tsv", surgery.decile_report(rep.heldout_before, rep.heldout_after,
                                                                   min(10, run.spec.n_classes)))
    write_timing(out, [{"step": "surgery", "seconds": secs}])
    hb, ha = rep.heldout_before, rep.heldout_after
    print(f"heldout sigma {hb.sigma:.4f} -> {ha.sigma:.4f}; global {hb.global_acc:.4f} -> {ha.global_acc:.4f}")
    return EXIT_OK


def cmd_bulkwalk(args: argparse.Namespace) -> int:
    run = Run(args)
    out = out_dir(args)
    bw = run.cfg["bulkwalk"]
    lz = run.cfg["lanczos"]
    with run.data.forbid("heldout"):
        batch = run.hvp_batch("bulkwalk")

        def spikes(th: np.ndarray, t: int) -> L.SpikeBasis:
            return L.top_eigenpairs(operators.model_oracle(run.spec, th, batch), int(lz["k"]), int(lz["m"]),
                                    seed=derive_seed(run.seed, "walk", t))

        def lam(th: np.ndarray) -> float:
            return float(L.top_eigenpairs(operators.model_oracle(run.spec, th, batch), 1, 4,
                                          seed=derive_seed(run.seed, "walk-lam")).eigenvalues[0])

        steps = int(bw["steps"])
        eps = E.eps_for_displacement(run.theta, steps, float(bw["relative_displacement"]))
        walk = E.bulk_walk(run.spec, run.theta, run.data.split("sensitivity"), spikes, steps, eps,
                           float(bw["wall_tol"]), derive_seed(run.seed, "walk-dir"), int(bw["history_cap"]), lam)
    rows = walk.to_rows()
    reports.write_table(out / "walk.tsv", rows)
    reports.write_series(out / "walk.dat", {k: [r[k] for r in rows] for k in
                                            ("step", "loss", "global_acc", "lam_max", "displacement")}, {"eps": eps})
    reports.write_yaml(out / MANIFEST, run.manifest("bulkwalk"))
    a, b = walk.start, walk.final
    print(f"displacement {b.displacement:.3f}; loss {a.loss:.4f} -> {b.loss:.4f}; max overlap {walk.max_overlap():.1e}")
    return EXIT_OK


def cmd_linearize(args: argparse.Namespace) -> int:
    run = Run(args)
    out = out_dir(args)
    lc = run.cfg["linearize"]
    scfg = surgery_config(run.cfg)
    with run.data.forbid("heldout"):
        basis = run.basis()
        acc = sensitivity.accuracy_fn(run.spec, run.data.split("sensitivity"))
        a0 = acc(run.theta)
        S = sensitivity.sensitivity_from_fn(acc, run.theta, basis.vectors, float(lc["eps"]))
        sweep = E.linearization_sweep(acc, run.theta, basis.vectors, S, a0,
                                      E.sweep_grid(float(lc["lo"]), float(lc["hi"]), int(lc["points"])),
                                      float(scfg.p_exponent) if not isinstance(scfg.p_exponent, str) else 1.0,
                                      scfg.weight_config())
    rows = sweep.to_rows()
    reports.write_table(out / "sweep.tsv", rows)
    reports.write_series(out / "sweep.dat", {k: [r[k] for r in rows] for k in
                                             ("alpha_norm", "predicted", "measured", "error")})
    fits = {"correlation": sweep.correlation,
            "additive": sweep.additive.__dict__ if sweep.additive else None,
            "pure_power": sweep.pure_power.__dict__ if sweep.pure_power else None}
    reports.write_yaml(out / "fit.yaml", fits)
    _write_s(out, S, basis.eigenvalues)
    reports.write_yaml(out / MANIFEST, run.manifest("linearize"))
    if sweep.additive:
        f = sweep.additive
        print(f"corr {sweep.correlation:.3f}; error ~ {f.c:.2e} + {f.b:.3g}|a|^{f.d:.3f} (R2 {f.r2:.3f})")
    return EXIT_OK


def cmd_stability(args: argparse.Namespace) -> int:
    run = Run(args)
    out = out_dir(args)
    st = run.cfg["stability"]
    lz = run.cfg["lanczos"]
    with run.data.forbid("heldout"):
        rows = E.stability_study(run.spec, run.theta, run.data, st["batch_sizes"], int(lz["k"]), int(lz["m"]),
                                 derive_seed(run.seed, "stability"), derive_seed(run.seed, "lanczos", "stability"),
                                 repeats=int(st["repeats"]))
    table = []
    for r in rows:
        d = r.report.to_dict()
        table.append({"n": r.n, "eigenvalues": r.eigenvalues, "matched_mean": d["matched_mean"],
                      "matched_min": d["matched_min"], "diagonal_mean": d["diagonal_mean"], "angles": d["angles"]})
    reports.write_table(out / "stability.tsv", table)
    write_timing(out, [{"n": r.n, "hvp_seconds": r.hvp_seconds, "lanczos_seconds": r.lanczos_seconds} for r in rows])
    reports.write_yaml(out / MANIFEST, run.manifest("stability"))
    for t in table:
        print(f"n={t['n']}: matched {t['matched_mean']:.3f} diagonal {t['diagonal_mean']:.3f}")
    return EXIT_OK


def cmd_baselines(args: argparse.Namespace) -> int:
    run = Run(args)
    out = out_dir(args)
    b = run.cfg["baselines"]
    cfg = E.BaselineConfig(int(b["finetune_epochs"]), float(b["focal_gamma"]), tuple(float(x) for x in b["tau_grid"]),
                           float(b["logit_tau"]), train_config(run.cfg), surgery_config(run.cfg))
    rows = E.compare_baselines(run.spec, run.theta, run.data, cfg)
    table = [r.to_dict() for r in rows]
    reports.write_table(out / "baselines.tsv", table)
    reports.write_yaml(out / MANIFEST, run.manifest("baselines"))
    for t in table:
        print(f"{t['method']:<18} global {t['global']:.4f} sigma {t['sigma']:.4f} delta {t['delta_sigma']:+.4f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

COMMANDS: dict[str, tuple[Callable[[argparse.Namespace], int], str]] = {
    "train": (cmd_train, "train a fixture model and write a checkpoint"),
    "spectrum": (cmd_spectrum, "top Ritz values and spike labels"),
    "slq": (cmd_slq, "spectral density by stochastic Lanczos quadrature"),
    "sensitivity": (cmd_sensitivity, "spike-class sensitivity matrix"),
    "surgery": (cmd_surgery, "run Hessian Surgery (optionally deflated)"),
    "bulkwalk": (cmd_bulkwalk, "directed walk orthogonal to the spikes"),
    "linearize": (cmd_linearize, "linearization sweep and error fit"),
    "stability": (cmd_stability, "eigenspace stability across nested batches"),
    "baselines": (cmd_baselines, "compare rebalancing baselines on heldout"),
    "rank": (cmd_rank, "effective rank of a sensitivity matrix"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hessurgery", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", required=True, help="report directory")
        if name != "rank":
            p.add_argument("--config", action="append", help="YAML config or earlier manifest (repeatable)")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. surgery.T=15")
        if name not in ("train", "rank"):
            p.add_argument("--checkpoint", help="directory written by `train` (or `surgery`)")
        if name in ("spectrum", "slq"):
            p.add_argument("--synthetic", action="store_true", help="use the planted spiked operator instead")
        if name == "surgery":
            p.add_argument("--resume", action="store_true", help="continue the run stored in --out")
            p.add_argument("--stop-after", type=int, help="stop (resumably) after this many iterations")
            p.add_argument("--deflated", action="store_true", help="sequential deflated surgery")
            p.add_argument("--phases", type=int, help="number of deflation phases")
        if name == "rank":
            p.add_argument("--matrix", help="S.tsv from the sensitivity command")
            p.add_argument("--singular-values", help="comma-separated singular values")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        return fn(args)
    except (C.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (models.TrainingDiverged, operators.DeflationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (Interrupted, KeyboardInterrupt):
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
