"""OOD detection and classification metrics.

ID nodes are the positive class throughout: a higher score should mean
in-distribution. Each fast metric has a brute-force twin (``*_bruteforce``)
used by the self-check and the test-suite.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.stats import rankdata

from .energy import threshold_at_tpr

POSITIVE_CLASS = "id"


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64).ravel()


def _pair(id_scores, ood_scores):
    a, b = _arr(id_scores), _arr(ood_scores)
    if a.size == 0 or b.size == 0:
        raise ValueError("detection metrics need nonempty ID and OOD score sets")
    return a, b


@dataclasses.dataclass
class DetectionResult:
    auroc: float
    aupr: float
    fpr95: float
    id_accuracy: float
    n_id: int
    n_ood: int
    gamma: float


def auroc(id_scores, ood_scores) -> float:
    """P(ID score > OOD score) with ties worth one half, via rank sums."""
    a, b = _pair(id_scores, ood_scores)
    ranks = rankdata(np.concatenate([a, b]))  # average ranks for ties
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def aupr(id_scores, ood_scores) -> float:
    """Step-wise area under precision-recall, ID positive, tied scores grouped."""
    a, b = _pair(id_scores, ood_scores)
    scores = np.concatenate([a, b])
    pos = np.concatenate([np.ones(a.size), np.zeros(b.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, pos = scores[order], pos[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(1.0 - pos)
    # last position of each run of equal scores is one threshold
    last = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / a.size
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def fpr_at_tpr(id_scores, ood_scores, tpr: float = 0.95) -> float:
    a, b = _pair(id_scores, ood_scores)
    gamma = threshold_at_tpr(a, tpr)
    return float(np.mean(b >= gamma))


def id_accuracy(logits, labels, mask) -> float:
    z = _arr(logits).reshape(np.shape(getattr(logits, "values", logits)))
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ValueError("id_accuracy: empty mask")
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    pred = np.argmax(z[idx], axis=1)
    return float(np.mean(pred == np.asarray(labels)[idx]))


def evaluate_detection(id_scores, ood_scores, accuracy: float, tpr: float = 0.95) -> DetectionResult:
    a, b = _pair(id_scores, ood_scores)
    gamma = threshold_at_tpr(a, tpr)
    return DetectionResult(
        auroc=auroc(a, b),
        aupr=aupr(a, b),
        fpr95=float(np.mean(b >= gamma)),
        id_accuracy=accuracy,
        n_id=int(a.size),
        n_ood=int(b.size),
        gamma=gamma,
    )


# --------------------------------------------------------------------------
# Brute-force twins


def auroc_bruteforce(id_scores, ood_scores) -> float:
    a, b = _pair(id_scores, ood_scores)
    wins = 0.0
    for x in a:
        for y in b:
            wins += 1.0 if x > y else 0.5 if x == y else 0.0
    return wins / (a.size * b.size)


def aupr_bruteforce(id_scores, ood_scores) -> float:
    """Sum of precision times recall gain over every distinct threshold."""
    a, b = _pair(id_scores, ood_scores)
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(np.concatenate([a, b]).tolist()), reverse=True):
        tp = sum(1 for x in a if x >= t)
        fp = sum(1 for y in b if y >= t)
        recall = tp / a.size
        area += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return area


def fpr_at_tpr_bruteforce(id_scores, ood_scores, tpr: float = 0.95) -> float:
    """FPR at the largest candidate threshold whose TPR reaches ``tpr``."""
    a, b = _pair(id_scores, ood_scores)
    need = int(np.ceil(tpr * a.size - 1e-9))
    best = None
    for t in set(a.tolist()):
        if sum(1 for x in a if x >= t) >= need and (best is None or t > best):
            best = t
    return sum(1 for y in b if y >= best) / b.size
