"""ROC curves and AUC."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import SingleClassInput


@dataclass
class EvalReport:
    auc: float
    roc_points: List[Tuple[float, float]]
    n_pos: int
    n_neg: int
    regime: str = ""
    config_digest: str = ""
    score_histogram: Optional[dict] = None
    version: str = __version__

    def to_json(self) -> str:
        d = asdict(self)
        d["roc_points"] = [list(p) for p in self.roc_points]
        return json.dumps(d, indent=2)

    def roc_csv(self) -> str:
        rows = ["fpr,tpr"] + [f"{f!r},{t!r}" for f, t in self.roc_points]
        return "\n".join(rows) + "\n"


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> EvalReport:
    """Threshold sweep over distinct scores, tied scores entering together.

    The trapezoid area under that curve equals the Mann-Whitney statistic
    with half credit for ties.  Area is accumulated in integer counts and
    divided once at the end.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("need at least one positive and one negative")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.append(np.nonzero(np.diff(s))[0], len(s) - 1)
    tp = np.concatenate([[0], np.cumsum(y)[ends]])
    fp = np.concatenate([[0], np.cumsum(1 - y)[ends]])
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))  # twice the count-space area
    auc = area2 / (2 * n_pos * n_neg)
    points = [(f / n_neg, t / n_pos) for f, t in zip(fp.tolist(), tp.tolist())]
    return EvalReport(auc=auc, roc_points=points, n_pos=n_pos, n_neg=n_neg)


def trapezoid_area(points: Sequence[Tuple[float, float]]) -> float:
    return sum((x1 - x0) * (y0 + y1) / 2.0
               for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]))


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def score_histogram(scores: Sequence[float], bins: int = 10) -> dict:
    counts, edges = np.histogram(np.asarray(scores, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def evaluate(model, records, regime: str = "", config: Optional[dict] = None,
             return_scores: bool = False):
    """Score every record in eval mode and build the ROC report."""
    from .training import predict_scores

    labels = [r.label for r in records]
    if any(y is None for y in labels):
        raise ValueError("evaluation needs labelled records")
    scores = predict_scores(model, records)
    report = roc_auc(scores, labels)
    report.regime = regime
    report.config_digest = config_digest(config or model.config.to_dict())
    report.score_histogram = score_histogram(scores)
    return (report, scores) if return_scores else report
