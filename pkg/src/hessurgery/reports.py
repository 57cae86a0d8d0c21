"""Report files: TSV tables, ``.dat`` plot series, YAML documents and the
spectrum report. Floats are written with ``repr`` so every file reads back
to the exact same values. Wall-clock measurements only ever go to
``timing.tsv`` so that every other file is bit-reproducible."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml


def plain(obj: Any) -> Any:
    """Convert numpy containers and scalars to YAML/JSON-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_yaml(path: str | Path, obj: Any) -> None:
    Path(path).write_text(yaml.safe_dump(plain(obj), sort_keys=False))


def read_yaml(path: str | Path) -> Any:
    return yaml.safe_load(Path(path).read_text())


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, dict, np.ndarray)):
        return json.dumps(plain(v))
    return str(v)


def _parse(s: str) -> Any:
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if s[:1] in "[{":
        try:
            return json.loads(s)
        except json.JSONDecodeError:
            pass
    if s in ("True", "False"):
        return s == "True"
    return s


def write_table(path: str | Path, rows: Sequence[dict[str, Any]], columns: Sequence[str] | None = None) -> None:
    cols = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    lines = ["\t".join(cols)]
    lines += ["\t".join(_fmt(r.get(c, "")) for c in cols) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path: str | Path) -> list[dict[str, Any]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        return []
    cols = lines[0].split("\t")
    return [dict(zip(cols, (_parse(x) for x in ln.split("\t")))) for ln in lines[1:] if ln]


def write_series(path: str | Path, columns: dict[str, Any], meta: dict[str, Any] | None = None) -> None:
    """Whitespace-separated numeric columns behind a ``#`` header."""
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=np.float64) for n in names]
    if len({a.size for a in arrays}) > 1:
        raise ValueError("series columns must have equal length")
    head = [f"# {k}: {json.dumps(plain(v))}" for k, v in (meta or {}).items()]
    head.append("# " + " ".join(names))
    body = [" ".join(repr(float(a[i])) for a in arrays) for i in range(arrays[0].size if arrays else 0)]
    Path(path).write_text("\n".join(head + body) + "\n")


def read_series(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    meta: dict[str, Any] = {}
    names: list[str] = []
    rows = []
    for ln in Path(path).read_text().splitlines():
        if ln.startswith("# "):
            body = ln[2:]
            if ": " in body:
                k, v = body.split(": ", 1)
                meta[k] = json.loads(v)
            else:
                names = body.split()
        elif ln.strip():
            rows.append([float(x) for x in ln.split()])
    data = np.array(rows).reshape(len(rows), len(names))
    return {n: data[:, i] for i, n in enumerate(names)}, meta


@dataclass
class SpectrumReport:
    eigenvalues: list[float]
    labels: list[str]
    orth_error: float
    bulk_median: float
    gap_factor: float
    source: dict[str, Any] = field(default_factory=dict)

    def ratios(self) -> list[float]:
        top = self.eigenvalues[0] if self.eigenvalues else math.nan
        return [lam / top if top else math.nan for lam in self.eigenvalues]

    def dumps(self) -> str:
        out = ["# spectrum report v1"]
        for key in ("orth_error", "bulk_median", "gap_factor"):
            out.append(f"{key}: {getattr(self, key)!r}")
        out.append(f"source: {json.dumps(plain(self.source), sort_keys=True)}")
        out.append("index\teigenvalue\tlabel\tratio")
        for i, (lam, lab, r) in enumerate(zip(self.eigenvalues, self.labels, self.ratios()), 1):
            out.append(f"{i}\t{lam!r}\t{lab}\t{r!r}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SpectrumReport":
        lines = text.splitlines()
        if not lines or lines[0] != "# spectrum report v1":
            raise ValueError("not a spectrum report")
        head: dict[str, str] = {}
        i = 1
        while not lines[i].startswith("index\t"):
            k, v = lines[i].split(": ", 1)
            head[k] = v
            i += 1
        eig, lab = [], []
        for ln in lines[i + 1:]:
            if ln:
                _, lam, label, _ = ln.split("\t")
                eig.append(float(lam))
                lab.append(label)
        return cls(eig, lab, float(head["orth_error"]), float(head["bulk_median"]),
                   float(head["gap_factor"]), json.loads(head["source"]))
