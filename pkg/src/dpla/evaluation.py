"""Known / novel / all evaluation with Hungarian label alignment and NMI."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

REPORT_FIELDS = ("epoch", "known_acc", "novel_acc", "all_acc", "novel_nmi", "all_nmi")


def hungarian(cost):
    """Minimum-cost perfect assignment on a square matrix.

    Shortest-augmenting-path method with row/column potentials, O(n^3).
    Returns ``(perm, total)`` where row ``i`` is assigned column ``perm[i]``.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix contains non-finite entries")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    # 1-based working arrays; index 0 is the virtual source column/row.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            delta, j1 = np.inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[col_owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
    perm = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[col_owner[j] - 1] = j - 1
    return perm, float(a[np.arange(n), perm].sum())


def _pair(preds, truth):
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} labels")
    if p.size == 0:
        raise ValueError("empty label sequences")
    return p, t


def clustering_accuracy(preds, truth, num_labels: int) -> float:
    """Fraction correct after the best one-to-one relabeling of predictions."""
    p, t = _pair(preds, truth)
    if min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= num_labels:
        raise ValueError(f"labels must lie in [0, {num_labels})")
    counts = np.zeros((num_labels, num_labels))
    np.add.at(counts, (p, t), 1)
    perm, _ = hungarian(counts.max() - counts)
    return float(counts[np.arange(num_labels), perm].sum() / p.size)


def _entropy(counts: np.ndarray) -> float:
    q = counts[counts > 0] / counts.sum()
    return float(-(q * np.log(q)).sum())


def nmi(preds, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    p, t = _pair(preds, truth)
    _, pi = np.unique(p, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    joint = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(joint, (pi, ti), 1)
    h_p = _entropy(joint.sum(axis=1))
    h_t = _entropy(joint.sum(axis=0))
    if h_p == 0.0 or h_t == 0.0:
        return 0.0
    pxy = joint / p.size
    outer = np.outer(pxy.sum(axis=1), pxy.sum(axis=0))
    nz = pxy > 0
    mi = float((pxy[nz] * np.log(pxy[nz] / outer[nz])).sum())
    return min(max(mi / ((h_p + h_t) / 2), 0.0), 1.0)


@dataclass(frozen=True)
class MetricsReport:
    epoch: int
    known_acc: float | None
    novel_acc: float | None
    all_acc: float | None
    novel_nmi: float | None
    all_nmi: float | None

    def as_fields(self) -> list[str]:
        """Fixed-order string fields; metrics in 6-decimal fixed point, absent as empty."""
        out = [str(self.epoch)]
        for name in REPORT_FIELDS[1:]:
            v = getattr(self, name)
            out.append("" if v is None else f"{v:.6f}")
        return out

    def to_record(self) -> str:
        """One JSON line with keys in ``REPORT_FIELDS`` order."""
        parts = [f'"epoch": {self.epoch}']
        for name, text in zip(REPORT_FIELDS[1:], self.as_fields()[1:]):
            parts.append(f'"{name}": {text or "null"}')
        return "{" + ", ".join(parts) + "}"

    @classmethod
    def from_record(cls, line: str) -> "MetricsReport":
        data = json.loads(line)
        if list(data) != list(REPORT_FIELDS):
            raise ValueError(f"record fields {list(data)} do not match {REPORT_FIELDS}")
        return cls(**data)


def group_report(preds, truth, c_k: int, c_t: int, epoch: int = 0) -> MetricsReport:
    """Known accuracy by direct match; novel and all accuracy after Hungarian
    alignment over all ``c_t`` labels; NMI on the novel subset and overall."""
    p, t = _pair(preds, truth)
    known = t < c_k
    novel = ~known
    known_acc = float(np.mean(p[known] == t[known])) if known.any() else None
    if novel.any():
        novel_acc = clustering_accuracy(p[novel], t[novel], c_t)
        novel_nmi = nmi(p[novel], t[novel])
    else:
        novel_acc = novel_nmi = None
    return MetricsReport(
        epoch=epoch,
        known_acc=known_acc,
        novel_acc=novel_acc,
        all_acc=clustering_accuracy(p, t, c_t),
        novel_nmi=novel_nmi,
        all_nmi=nmi(p, t),
    )
