"""Classification metric suite plus clustering utilities.

Conventions used throughout: argmax ties resolve to the smaller class index,
0/0 ratios are defined as 0, and macro averages run over the classes actually
present in the evaluation labels (absent classes are listed, not averaged).
"""

import dataclasses
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import average_precision_score, f1_score, recall_score

logger = logging.getLogger(__name__)

UNDEFINED = None  # marker for metrics that need at least two distinct labels


@dataclasses.dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    macro_recall: float
    macro_auc: Optional[float]
    macro_auprc: Optional[float]
    per_class: Dict[int, Dict[str, float]]
    n_eval: int
    absent_classes: Tuple[int, ...] = ()

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "macro_recall": self.macro_recall,
            "macro_auc": self.macro_auc,
            "macro_auprc": self.macro_auprc,
        }


def _present_classes(labels: np.ndarray, num_classes: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    present = np.unique(labels)
    absent = tuple(int(c) for c in range(num_classes) if c not in set(present.tolist()))
    return present, absent


def macro_f1_score(labels, preds, num_classes: int) -> float:
    """Macro F1 over classes present in labels; 0/0-safe. Used for val scoring."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    present, _ = _present_classes(labels, num_classes)
    return float(f1_score(labels, preds, labels=present, average="macro", zero_division=0))


def _rank_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    # Mann-Whitney statistic with midranks for tied scores
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    ranks = rankdata(scores)
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(probs: np.ndarray, labels, num_classes: Optional[int] = None) -> MetricsReport:
    """Score a probability matrix against integer labels.

    AUC is the rank-based one-vs-rest form, AUPRC is step-interpolated average
    precision; both become the undefined marker when labels hold a single class.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError("probs must be (N, C) aligned with labels")
    if not np.isfinite(probs).all() or (probs < 0).any():
        raise ValueError("probs must be finite and non-negative")
    n, c = probs.shape
    if num_classes is None:
        num_classes = c
    preds = np.argmax(probs, axis=1)  # first max wins, i.e. smaller class on ties
    present, absent = _present_classes(labels, num_classes)

    accuracy = float(np.mean(preds == labels))
    macro_f1 = float(f1_score(labels, preds, labels=present, average="macro", zero_division=0))
    weighted_f1 = float(f1_score(labels, preds, labels=present, average="weighted", zero_division=0))
    macro_recall = float(recall_score(labels, preds, labels=present, average="macro", zero_division=0))

    per_class: Dict[int, Dict[str, float]] = {}
    f1_each = f1_score(labels, preds, labels=present, average=None, zero_division=0)
    rec_each = recall_score(labels, preds, labels=present, average=None, zero_division=0)
    for cls, f1_c, rec_c in zip(present, f1_each, rec_each):
        per_class[int(cls)] = {"f1": float(f1_c), "recall": float(rec_c)}

    if present.size < 2:
        macro_auc = UNDEFINED
        macro_auprc = UNDEFINED
    else:
        aucs: List[float] = []
        aps: List[float] = []
        for cls in present:
            pos = labels == cls
            aucs.append(_rank_auc(probs[:, cls], pos))
            aps.append(float(average_precision_score(pos.astype(np.int64), probs[:, cls])))
            per_class[int(cls)]["auc"] = aucs[-1]
            per_class[int(cls)]["auprc"] = aps[-1]
        macro_auc = float(np.mean(aucs))
        macro_auprc = float(np.mean(aps))

    return MetricsReport(
        accuracy=accuracy,
        macro_f1=macro_f1,
        weighted_f1=weighted_f1,
        macro_recall=macro_recall,
        macro_auc=macro_auc,
        macro_auprc=macro_auprc,
        per_class=per_class,
        n_eval=n,
        absent_classes=absent,
    )


def kmeans_cluster(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 300):
    """Lloyd iterations from a seeded pick plus greedy farthest-point seeding.

    Deterministic given the seed: the first center is drawn from the RNG, every
    later center is the point farthest from the chosen set (smaller index on
    ties), and an emptied cluster is re-seeded at the globally farthest point.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 2 or k > n:
        raise ValueError(f"k must satisfy 2 <= k <= N, got k={k} with N={n}")
    rng = np.random.default_rng(seed)
    centers_idx = [int(rng.integers(n))]
    min_d2 = ((x - x[centers_idx[0]]) ** 2).sum(axis=1)
    while len(centers_idx) < k:
        nxt = int(np.argmax(min_d2))
        centers_idx.append(nxt)
        min_d2 = np.minimum(min_d2, ((x - x[nxt]) ** 2).sum(axis=1))
    centers = x[centers_idx].copy()

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # re-seed an emptied cluster at the worst-fit point
                far = int(np.argmax(d2[np.arange(n), assign]))
                centers[j] = x[far]
    return assign, centers


def silhouette(x: np.ndarray, assign: np.ndarray) -> float:
    """Mean silhouette under Euclidean distance; singletons contribute 0."""
    x = np.asarray(x, dtype=np.float64)
    assign = np.asarray(assign)
    clusters = np.unique(assign)
    if clusters.size < 2:
        raise ValueError("silhouette requires at least two clusters")
    d = np.sqrt(np.maximum(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2), 0.0))
    n = x.shape[0]
    scores = np.zeros(n)
    for i in range(n):
        own = assign == assign[i]
        n_own = int(own.sum())
        if n_own == 1:
            continue
        a = d[i, own].sum() / (n_own - 1)
        b = min(d[i, assign == c].mean() for c in clusters if c != assign[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())
