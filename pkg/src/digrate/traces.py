"""Per-iteration run records and their on-disk formats.

The canonical trace file is a CSV with a fixed six-column schema. Series
needed only by the small-gain audit (raw optimality distance, successive
gradient differences) do not fit that schema and travel in a JSON sidecar
written next to the CSV.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("k", "residual", "cons_viol_x", "cons_viol_y",
               "conservation_err", "v_min")

AUDIT_SUFFIX = ".audit.json"


@dataclass
class RunTrace:
    """One simulation run: per-iteration metrics plus run metadata.

    residual is the Frobenius distance to the reference solution normalized
    by its initial value; cons_viol_* are distances of the iterate blocks to
    the consensus subspace; conservation_err measures drift of the tracker
    column sums from the current gradient column sums; v_min is the smallest
    push-sum weight (NaN for runs without one).
    """

    k: np.ndarray
    residual: np.ndarray
    cons_viol_x: np.ndarray
    cons_viol_y: np.ndarray
    conservation_err: np.ndarray
    v_min: np.ndarray
    metadata: dict = field(default_factory=dict)
    # audit series (not part of the CSV schema)
    q_norm: np.ndarray | None = None          # ||x(k) - x*||_F, unnormalized
    z_norm: np.ndarray | None = None          # ||grad(k) - grad(k-1)||_F, z(0)=0
    grad_norm: np.ndarray | None = None       # ||grad f(x(k))||_F
    xbar0_error: float | None = None          # ||mean row of x(0) - x*||
    r0: float | None = None                   # ||x(0) - x*||_F
    # full state history (in memory only, for algebraic replay checks)
    history: dict | None = None

    def __post_init__(self):
        rows = len(self.k)
        for name in ("residual", "cons_viol_x", "cons_viol_y",
                     "conservation_err", "v_min"):
            if len(getattr(self, name)) != rows:
                raise ValueError(f"column {name} has mismatched length")
        if rows and not np.all(np.diff(self.k) > 0):
            raise ValueError("iteration indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.k)

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for i in range(len(self)):
            cells = [str(int(self.k[i]))]
            for col in ("residual", "cons_viol_x", "cons_viol_y", "conservation_err"):
                cells.append(_fmt(getattr(self, col)[i]))
            v = self.v_min[i]
            cells.append("" if math.isnan(v) else _fmt(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(self.to_csv())
        if self.q_norm is not None:
            sidecar = path.with_name(path.name + AUDIT_SUFFIX)
            sidecar.write_text(json.dumps(self._audit_payload(), indent=1) + "\n")

    def _audit_payload(self) -> dict:
        return {
            "metadata": _plain(self.metadata),
            "q_norm": [float(v) for v in self.q_norm],
            "z_norm": [float(v) for v in self.z_norm],
            "grad_norm": [float(v) for v in self.grad_norm],
            "xbar0_error": self.xbar0_error,
            "r0": self.r0,
        }

    @classmethod
    def from_csv(cls, text: str, metadata: dict | None = None) -> "RunTrace":
        lines = [ln for ln in text.strip().splitlines() if ln]
        if not lines or lines[0].split(",") != list(CSV_COLUMNS):
            raise ValueError("trace CSV must start with the canonical header "
                             + ",".join(CSV_COLUMNS))
        cols: list[list[float]] = [[] for _ in CSV_COLUMNS]
        for ln in lines[1:]:
            cells = ln.split(",")
            if len(cells) != len(CSV_COLUMNS):
                raise ValueError(f"malformed trace row: {ln!r}")
            cols[0].append(int(cells[0]))
            for j in range(1, 5):
                cols[j].append(float(cells[j]))
            cols[5].append(float("nan") if cells[5] == "" else float(cells[5]))
        return cls(k=np.array(cols[0], dtype=int),
                   residual=np.array(cols[1]),
                   cons_viol_x=np.array(cols[2]),
                   cons_viol_y=np.array(cols[3]),
                   conservation_err=np.array(cols[4]),
                   v_min=np.array(cols[5]),
                   metadata=metadata or {})

    @classmethod
    def read(cls, path: str | Path) -> "RunTrace":
        path = Path(path)
        trace = cls.from_csv(path.read_text())
        sidecar = path.with_name(path.name + AUDIT_SUFFIX)
        if sidecar.exists():
            payload = json.loads(sidecar.read_text())
            trace.metadata = payload.get("metadata", {})
            trace.q_norm = np.array(payload["q_norm"])
            trace.z_norm = np.array(payload["z_norm"])
            trace.grad_norm = np.array(payload["grad_norm"])
            trace.xbar0_error = payload["xbar0_error"]
            trace.r0 = payload["r0"]
        return trace

    def same_rows(self, other: "RunTrace") -> bool:
        """Exact equality of the six canonical columns (NaN-aware)."""
        if len(self) != len(other):
            return False
        if not np.array_equal(self.k, other.k):
            return False
        for name in ("residual", "cons_viol_x", "cons_viol_y", "conservation_err",
                     "v_min"):
            a, b = getattr(self, name), getattr(other, name)
            if not np.array_equal(a, b, equal_nan=True):
                return False
        return True


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _plain(obj):
    """JSON-encodable copy of metadata values."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
