"""Displacement metrics and evaluation reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def _pair(pred, truth, min_len: int = 1):
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if p.shape != t.shape:
        raise ContractError(f"prediction length {len(p)} != ground-truth length {len(t)}")
    if len(t) < min_len:
        raise ContractError(f"need at least {min_len} points, got {len(t)}")
    return p, t


def displacements(pred, truth) -> np.ndarray:
    p, t = _pair(pred, truth)
    d = p - t
    return np.hypot(d[:, 0], d[:, 1])


def ade(pred, truth) -> float:
    """Mean Euclidean distance over all steps."""
    return float(displacements(pred, truth).mean())


def fde(pred, truth) -> float:
    """Euclidean distance at the final step."""
    return float(displacements(pred, truth)[-1])


def default_theta(truth, factor: float = 0.1) -> float:
    """``factor`` times the mean ground-truth step length."""
    t = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if len(t) < 2:
        return 0.0
    return factor * float(np.sqrt((np.diff(t, axis=0) ** 2).sum(axis=1)).mean())


def nonlinear_indices(truth, theta: float) -> np.ndarray:
    """Interior indices whose second-difference norm exceeds ``theta`` (strictly)."""
    t = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if len(t) < 3:
        return np.zeros(0, dtype=np.int64)
    second = t[2:] - 2.0 * t[1:-1] + t[:-2]
    return np.flatnonzero(np.hypot(second[:, 0], second[:, 1]) > theta) + 1


def nade(pred, truth, theta: float | None = None) -> float | None:
    """ADE over the non-linear ground-truth points; ``None`` when there are none.

    ``theta`` defaults to :func:`default_theta` of ``truth``.
    """
    p, t = _pair(pred, truth, min_len=3)
    if theta is None or theta < 0:
        theta = default_theta(t)
    idx = nonlinear_indices(t, theta)
    if idx.size == 0:
        return None
    d = p[idx] - t[idx]
    return float(np.hypot(d[:, 0], d[:, 1]).mean())


@dataclass
class SampleMetrics:
    sample_id: str
    ade: float
    fde: float
    nade: float | None


@dataclass
class EvalReport:
    """Per-sample metrics with sample-weighted aggregates (original units)."""

    rows: list = field(default_factory=list)

    def add(self, sample_id: str, pred, truth, theta: float | None = None) -> SampleMetrics:
        p, t = _pair(pred, truth)
        row = SampleMetrics(
            str(sample_id), ade(p, t), fde(p, t), nade(p, t, theta) if len(t) >= 3 else None
        )
        self.rows.append(row)
        return row

    @property
    def count(self) -> int:
        return len(self.rows)

    @property
    def nade_count(self) -> int:
        return sum(r.nade is not None for r in self.rows)

    @property
    def coverage(self) -> float:
        return self.nade_count / self.count if self.rows else 0.0

    def _mean(self, key: str):
        vals = [getattr(r, key) for r in self.rows if getattr(r, key) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def ade(self):
        return self._mean("ade")

    @property
    def fde(self):
        return self._mean("fde")

    @property
    def nade(self):
        return self._mean("nade")

    def aggregate(self) -> dict:
        return {
            "samples": self.count,
            "ade": self.ade,
            "fde": self.fde,
            "nade": self.nade,
            "nade_samples": self.nade_count,
            "nade_coverage": self.coverage,
        }

    def per_sample_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "ade", "fde", "nade"])
        for r in self.rows:
            w.writerow([r.sample_id, repr(r.ade), repr(r.fde), "" if r.nade is None else repr(r.nade)])
        return buf.getvalue()

    def aggregate_csv(self) -> str:
        agg = self.aggregate()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(agg))
        w.writerow(["" if v is None else repr(v) for v in agg.values()])
        return buf.getvalue()

    def table(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.4f}"

        lines = [
            f"{'metric':<8} {'value':>10}",
            f"{'ADE':<8} {fmt(self.ade):>10}",
            f"{'FDE':<8} {fmt(self.fde):>10}",
            f"{'n-ADE':<8} {fmt(self.nade):>10}",
            f"samples: {self.count}  n-ADE coverage: {self.coverage:.1%} ({self.nade_count})",
        ]
        return "\n".join(lines)
