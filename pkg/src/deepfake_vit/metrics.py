"""Detection metrics over (label, fake-probability) records.

Fake is the positive class throughout: ``y = 1`` means fake.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError

PROB_EPS = 1e-7
DEFAULT_THRESHOLD = 0.55


@dataclass(frozen=True)
class EvalRecord:
    label: int
    probability: float
    head: str = "distill"
    sample_id: str | int | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label}")
        if not 0.0 <= self.probability <= 1.0:
            raise ContractError(f"probability must be in [0, 1], got {self.probability}")


def make_records(labels, probabilities, head: str = "distill", ids=None) -> list[EvalRecord]:
    ids = range(len(labels)) if ids is None else ids
    return [EvalRecord(int(y), float(p), head, i) for y, p, i in zip(labels, probabilities, ids)]


def _arrays(records: Sequence[EvalRecord]) -> tuple[np.ndarray, np.ndarray]:
    if len(records) == 0:
        raise ContractError("metrics need at least one record")
    y = np.array([r.label for r in records], dtype=np.float64)
    p = np.array([r.probability for r in records], dtype=np.float64)
    return y, p


def log_loss(records: Sequence[EvalRecord]) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    y, p = _arrays(records)
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def roc_auc(records: Sequence[EvalRecord]) -> float:
    """P(score_fake > score_real) with ties counted 1/2 (Mann-Whitney U / n1 n0)."""
    y, p = _arrays(records)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both fake and real records")
    ranks = rankdata(p)   # average ranks resolve ties as 1/2
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(records: Sequence[EvalRecord]) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) at every distinct score, using the >= rule,
    from (inf, 0, 0) down to the lowest score (1, 1)."""
    y, p = _arrays(records)
    n_pos, n_neg = y.sum(), len(y) - y.sum()
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC curve needs both fake and real records")
    points = [(math.inf, 0.0, 0.0)]
    for t in np.unique(p)[::-1]:
        pred = p >= t
        points.append((float(t), float((pred & (y == 0)).sum() / n_neg),
                       float((pred & (y == 1)).sum() / n_pos)))
    return points


@dataclass
class MetricsReport:
    log_loss: float
    auc: float | None
    f1: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    n: int
    head: str = "distill"
    f1_degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for key, value in asdict(self).items():
            if key == "extra":
                for k, v in sorted(value.items()):
                    writer.writerow([k, v])
            else:
                writer.writerow([key, value])
        return buf.getvalue()


def confusion_counts(records: Sequence[EvalRecord], threshold: float = DEFAULT_THRESHOLD) -> dict[str, int]:
    """Predict fake iff probability >= threshold."""
    y, p = _arrays(records)
    pred = p >= threshold
    pos = y == 1
    return {"tp": int((pred & pos).sum()), "fp": int((pred & ~pos).sum()),
            "tn": int((~pred & ~pos).sum()), "fn": int((~pred & pos).sum())}


def f1_score(tp: int, fp: int, fn: int) -> tuple[float, bool]:
    """F1 x 100 with fake as positive; ``(0.0, True)`` when TP+FP+FN == 0."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0, True
    return 100.0 * 2 * tp / denom, False


def confusion_and_f1(records: Sequence[EvalRecord], threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    counts = confusion_counts(records, threshold)
    f1, degenerate = f1_score(counts["tp"], counts["fp"], counts["fn"])
    try:
        auc = roc_auc(records)
    except UndefinedMetricError:
        auc = None
    head = records[0].head
    return MetricsReport(log_loss(records), auc, f1, threshold, n=len(records), head=head,
                         f1_degenerate=degenerate, **counts)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if len(a) != len(b) or len(a) < 2:
        raise ContractError("pearson needs two equal-length series of at least 2 values")
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class Correlation:
    rows: list[tuple[str, float, float]]
    pearson: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "prob_a", "prob_b"])
        for row in self.rows:
            writer.writerow([row[0], repr(row[1]), repr(row[2])])
        return buf.getvalue()


def export_correlation(records_a: Sequence[EvalRecord], records_b: Sequence[EvalRecord]) -> Correlation:
    """Pair two models' predictions on the same samples (matched by id)."""
    by_id_b = {r.sample_id: r for r in records_b}
    ids_a = [r.sample_id for r in records_a]
    if len(by_id_b) != len(records_b) or len(set(ids_a)) != len(ids_a) or set(ids_a) != set(by_id_b):
        raise ContractError("record sets do not cover the same unique sample ids")
    rows = []
    for r in records_a:
        other = by_id_b[r.sample_id]
        if other.label != r.label:
            raise ContractError(f"label mismatch for sample {r.sample_id}")
        rows.append((str(r.sample_id), r.probability, other.probability))
    return Correlation(rows, pearson([r[1] for r in rows], [r[2] for r in rows]))
