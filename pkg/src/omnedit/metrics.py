"""Evaluation metrics: multi-label F1, ROC-AUC, mask IoU and dataset L1."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .imgcore import ShapeMismatchError, l1_distance

log = logging.getLogger(__name__)

THRESHOLD_GRID = (0.15, 0.20, 0.25, 0.30, 0.35)
REPORT_VERSION = 1


class UndefinedMetricError(ValueError):
    pass


def _flat(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same size")
    if s.size == 0:
        raise ValueError("need at least one scored label")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def precision_recall(scores, labels, threshold):
    s, y = _flat(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall, (tp, fp, fn)


def f1_at_threshold(scores, labels, threshold=0.5) -> float:
    """Micro-averaged F1 with ``score >= threshold`` predicted positive.

    Multi-label inputs (samples x labels) are pooled before counting.  With
    no predicted and no actual positives the F1 is 1.
    """
    _, _, (tp, fp, fn) = precision_recall(scores, labels, threshold)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def roc_auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties half."""
    s, y = _flat(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a >= 0.5
    b = b >= 0.5
    union = np.sum(a | b)
    if union == 0:
        return 1.0
    return float(np.sum(a & b) / union)


def dataset_l1_detail(pairs):
    """Mean per-pair L1 over aligned pairs; returns ``(mean, used, skipped)``."""
    values = []
    skipped = 0
    for i, (produced, target) in enumerate(pairs):
        try:
            values.append(l1_distance(produced, target))
        except ShapeMismatchError as exc:
            skipped += 1
            log.warning("pair %d skipped: %s", i, exc)
    mean = float(np.mean(values)) if values else float("nan")
    return mean, len(values), skipped


def dataset_l1(pairs) -> float:
    return dataset_l1_detail(pairs)[0]


@dataclass
class EvalReport:
    sample_count: int = 0
    skipped: int = 0
    l1: float | None = None
    no_edit_l1: float | None = None
    f1: dict = field(default_factory=dict)
    roc_auc: float | None = None
    mean_iou: float | None = None
    iou_count: int = 0
    averaging: str = "micro"
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["f1"] = {f"{float(k):.2f}": v for k, v in sorted(self.f1.items(), key=lambda kv: float(kv[0]))}
        return d

    @classmethod
    def from_dict(cls, d) -> EvalReport:
        d = dict(d)
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        d["f1"] = {f"{float(k):.2f}": v for k, v in d.get("f1", {}).items()}
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())

    @classmethod
    def load(cls, path) -> EvalReport:
        return cls.from_dict(json.loads(Path(path).read_text()))
