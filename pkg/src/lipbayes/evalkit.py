"""Ranking metrics for mislabel detection plus a feature-noise stress sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .header import BayesHeader, predict_mc
from .noiselab import FeatureDataset
from .numkit import RngStream, gaussian_sample

__all__ = [
    "ScoredTruth",
    "SweepPoint",
    "auc_pr",
    "auc_roc",
    "perturbation_sweep",
    "precision_recall_at",
]


@dataclass
class ScoredTruth:
    """Suspicion scores with boolean ground truth (True = mislabeled)."""

    scores: np.ndarray
    truth: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=bool)
        if self.scores.shape != self.truth.shape or self.scores.ndim != 1:
            raise ValueError("scores and truth must be 1-D of equal length")
        if self.ids is None:
            self.ids = np.arange(len(self.scores))
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.scores)


def _tied_ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_roc(st: ScoredTruth) -> float:
    """Probability a random positive outranks a random negative (ties count half)."""
    pos = int(st.truth.sum())
    neg = len(st) - pos
    if pos == 0 or neg == 0:
        raise ValueError("AUC-ROC needs both classes present")
    ranks = _tied_ranks(st.scores)
    rank_sum = float(ranks[st.truth].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def auc_pr(st: ScoredTruth) -> float:
    """Area under the precision-recall step curve.

    Thresholds sweep the distinct scores from high to low; each recall
    increment contributes at the precision reached there (step
    interpolation, no trapezoids across precision cliffs).
    """
    pos = int(st.truth.sum())
    if pos == 0:
        raise ValueError("AUC-PR needs at least one positive")
    order = np.argsort(-st.scores, kind="mergesort")
    scores = st.scores[order]
    truth = st.truth[order]
    area = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and scores[j + 1] == scores[i]:
            j += 1
        tp += int(truth[i : j + 1].sum())
        seen += j - i + 1
        recall = tp / pos
        precision = tp / seen
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return area


def precision_recall_at(
    st: ScoredTruth, fraction: float
) -> tuple[float, float]:
    """Precision and recall of flagging the top ceil(fraction*n) scores.

    Ties break toward the lower sample id so the flagged set is
    deterministic.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    n = len(st)
    k = math.ceil(fraction * n)
    order = np.lexsort((st.ids, -st.scores))
    flagged = order[:k]
    tp = int(st.truth[flagged].sum())
    pos = int(st.truth.sum())
    precision = tp / k
    recall = tp / pos if pos > 0 else 0.0
    return precision, recall


@dataclass
class SweepPoint:
    scale: float
    accuracy: float
    mean_confidence: float
    mean_uncertainty: float


def perturbation_sweep(
    header: BayesHeader,
    ds: FeatureDataset,
    noise_scales,
    S: int = 50,
    stream: RngStream | None = None,
) -> list[SweepPoint]:
    """Accuracy/confidence/uncertainty curves under isotropic feature noise.

    A stand-in for image-space robustness studies: each scale adds seeded
    Gaussian noise directly to the feature vectors before MC prediction.
    Scale 0 reproduces the clean evaluation exactly.
    """
    if stream is None:
        stream = RngStream(root_seed=0, purpose="perturb")
    points = []
    for i, scale in enumerate(noise_scales):
        if scale < 0:
            raise ValueError("noise scales must be >= 0")
        Zp = ds.features
        if scale > 0:
            noise = gaussian_sample(stream.child("noise", step=i), *ds.features.shape)
            Zp = ds.features + scale * noise
        summary = predict_mc(header, Zp, S, stream.child("mc", step=i))
        points.append(
            SweepPoint(
                scale=float(scale),
                accuracy=float((summary.predicted_class == ds.labels).mean()),
                mean_confidence=float(summary.confidence.mean()),
                mean_uncertainty=float(summary.uncertainty.mean()),
            )
        )
    return points
