"""Mislabel suspicion scores and their adaptive arithmetic-mean fusion.

Two per-sample signals are produced: disagreement between a sample's label
and its cosine-nearest neighbors, and the Monte Carlo dispersion of a
trained header's predicted-class probability. The fused score weighs the
two channels by how bimodal their score distributions are (a bimodal score
distribution separates clean from corrupted samples more decisively), with
the weights clipped so neither channel is ever ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .header import PredictiveSummary
from .noiselab import FeatureDataset, cosine_distances
from .numkit import DegenerateDistributionError, bimodality_coefficient

__all__ = [
    "SuspicionReport",
    "fuse_adaptive",
    "fusion_weight",
    "knn_suspicion",
    "uncertainty_suspicion",
]

KNN_WEIGHT_EPS = 1e-8
FUSION_SLOPE = 8.0
FUSION_CLIP = (0.2, 0.8)


@dataclass
class SuspicionReport:
    """Per-sample suspicion channels plus the fusion metadata."""

    ids: np.ndarray
    s_knn: np.ndarray
    s_unc: np.ndarray
    s_fused: np.ndarray
    flagged: np.ndarray
    w_knn: float
    w_unc: float
    b_knn: float | None
    b_unc: float | None
    expected_rate: float
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def _minmax(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max normalize to [0,1]; (near-)constant input degenerates to zeros.

    The tolerance keeps rounding residue on an effectively constant vector
    from being amplified to full range.
    """
    lo = float(x.min())
    hi = float(x.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros_like(x), True
    return (x - lo) / (hi - lo), False


def knn_agreement(
    ds: FeatureDataset, K: int = 10, eps: float = KNN_WEIGHT_EPS
) -> np.ndarray:
    """Raw inverse-distance-weighted label agreement a_i in [0, 1].

    For each sample, the K cosine-nearest other samples vote with weights
    proportional to 1/(distance + eps); a_i is the weight mass on neighbors
    sharing the sample's label.
    """
    n = len(ds)
    if n <= K:
        raise ValueError(f"need n > K, got n={n}, K={K}")
    D = cosine_distances(ds.features)
    np.fill_diagonal(D, np.inf)
    agreement = np.empty(n)
    for i in range(n):
        part = np.argpartition(D[i], K - 1)[:K]
        nbrs = part[np.lexsort((part, D[i, part]))]
        w = 1.0 / (D[i, nbrs] + eps)
        w /= w.sum()
        agreement[i] = float(w[ds.labels[nbrs] == ds.labels[i]].sum())
    return agreement


def knn_suspicion(ds: FeatureDataset, K: int = 10) -> np.ndarray:
    """Neighborhood-disagreement suspicion score, min-max normalized.

    ``s = 1 - a_hat`` where ``a_hat`` is the agreement of
    :func:`knn_agreement` normalized over the scored split. A constant
    agreement vector is degenerate and scores everyone 0.
    """
    a_hat, degenerate = _minmax(knn_agreement(ds, K))
    if degenerate:
        return np.zeros(len(ds))
    return 1.0 - a_hat


def uncertainty_suspicion(pred: PredictiveSummary) -> np.ndarray:
    """Min-max normalized MC predictive uncertainty (0s when constant)."""
    if pred.n_samples < 2:
        raise ValueError("need MC summaries from at least 2 samples")
    scores, degenerate = _minmax(np.asarray(pred.uncertainty, dtype=np.float64))
    if degenerate:
        return np.zeros(len(pred))
    return scores


def fusion_weight(
    b_knn: float,
    b_unc: float,
    slope: float = FUSION_SLOPE,
    clip: tuple[float, float] = FUSION_CLIP,
) -> float:
    """kNN-channel weight from the bimodality gap: clipped logistic(slope * (b_knn - b_unc))."""
    raw = 1.0 / (1.0 + math.exp(-slope * (b_knn - b_unc)))
    return float(min(max(raw, clip[0]), clip[1]))


def fuse_adaptive(
    s_knn: np.ndarray,
    s_unc: np.ndarray,
    expected_rate: float,
    ids: np.ndarray | None = None,
) -> SuspicionReport:
    """Bimodality-weighted convex combination of the two suspicion channels.

    The channel whose score distribution is more bimodal gets more weight;
    weights are clipped to [0.2, 0.8]. ``expected_rate`` only sizes the
    flagged set (the ceil(rate * n) highest fused scores, ties broken by
    the lower sample id); it does not change any score.
    """
    s_knn = np.asarray(s_knn, dtype=np.float64)
    s_unc = np.asarray(s_unc, dtype=np.float64)
    if s_knn.shape != s_unc.shape or s_knn.ndim != 1:
        raise ValueError("score vectors must be 1-D and of equal length")
    if not 0.0 < expected_rate <= 0.5:
        raise ValueError("expected_rate must lie in (0, 0.5]")
    n = len(s_knn)
    if ids is None:
        ids = np.arange(n)
    ids = np.asarray(ids, dtype=np.int64)

    degenerate = False
    b_knn: float | None = None
    b_unc: float | None = None
    try:
        b_knn = bimodality_coefficient(s_knn)
        b_unc = bimodality_coefficient(s_unc)
        w_knn = fusion_weight(b_knn, b_unc)
    except DegenerateDistributionError:
        degenerate = True
        w_knn = 0.5
    w_unc = 1.0 - w_knn
    s_fused = w_knn * s_knn + w_unc * s_unc

    n_flag = math.ceil(expected_rate * n)
    order = np.lexsort((ids, -s_fused))
    flagged = np.zeros(n, dtype=bool)
    flagged[order[:n_flag]] = True
    return SuspicionReport(
        ids=ids,
        s_knn=s_knn,
        s_unc=s_unc,
        s_fused=s_fused,
        flagged=flagged,
        w_knn=w_knn,
        w_unc=w_unc,
        b_knn=b_knn,
        b_unc=b_unc,
        expected_rate=expected_rate,
        degenerate=degenerate,
    )
