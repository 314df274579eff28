"""Data-quality estimation from uncertainty or confidence response signals.

A Gaussian response model is fitted per noise rate to a signal measured
across repeated seeded runs; inverting it through Bayes' rule yields a
posterior over the noise rate for any new signal value. Soft accuracy and
soft confidence score that posterior against ground truth with a tolerance
window for near misses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "LookupHistogram",
    "QualityModel",
    "constant_map_baseline",
    "fit_response_model",
    "leave_one_seed_out",
    "lookup_histogram",
    "map_eta",
    "posterior_eta",
    "soft_metrics",
]

STD_FLOOR = 1e-6
DEFAULT_WINDOW = 0.02


@dataclass
class QualityModel:
    """Per-rate Gaussian response parameters with a prior over rates."""

    eta_grid: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        self.eta_grid = np.asarray(self.eta_grid, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        self.prior = np.asarray(self.prior, dtype=np.float64)
        if not (len(self.eta_grid) == len(self.means) == len(self.stds) == len(self.prior)):
            raise ValueError("grid, means, stds and prior must align")
        if np.any(self.stds <= 0):
            raise ValueError("stds must be positive (floored at fit time)")
        total = self.prior.sum()
        if total <= 0:
            raise ValueError("prior must have positive mass")
        self.prior = self.prior / total


def fit_response_model(
    calibration: Mapping[float, Sequence[float]],
    prior: Sequence[float] | None = None,
    std_floor: float = STD_FLOOR,
) -> QualityModel:
    """Fit mean and Bessel-corrected std of the signal at every rate.

    ``calibration`` maps each noise rate to the signal values observed over
    seeds; every rate needs at least two seeds. Stds are floored so a rate
    with identical observations still defines a proper likelihood.
    """
    if not calibration:
        raise ValueError("calibration must contain at least one rate")
    etas = np.array(sorted(calibration), dtype=np.float64)
    means = np.empty(len(etas))
    stds = np.empty(len(etas))
    for k, eta in enumerate(etas):
        vals = np.asarray(calibration[eta], dtype=np.float64)
        if vals.size < 2:
            raise ValueError(f"rate {eta} has {vals.size} seeds, need >= 2")
        means[k] = vals.mean()
        stds[k] = max(float(vals.std(ddof=1)), std_floor)
    if prior is None:
        prior = np.full(len(etas), 1.0 / len(etas))
    return QualityModel(eta_grid=etas, means=means, stds=stds, prior=prior)


def posterior_eta(model: QualityModel, signal: float) -> np.ndarray:
    """Posterior over the rate grid given one observed signal value.

    Computed in log space, so it only degenerates (uniform fallback, with a
    warning) if every rate has exactly zero likelihood.
    """
    x = float(signal)
    log_lik = (
        np.log(model.prior, where=model.prior > 0, out=np.full_like(model.prior, -np.inf))
        - np.log(model.stds)
        - 0.5 * ((x - model.means) / model.stds) ** 2
    )
    peak = log_lik.max()
    if not np.isfinite(peak):
        warnings.warn("all posterior mass underflowed; falling back to uniform")
        return np.full(len(model.eta_grid), 1.0 / len(model.eta_grid))
    p = np.exp(log_lik - peak)
    return p / p.sum()


def map_eta(model: QualityModel, signal: float) -> float:
    """Maximum-a-posteriori rate; ties resolve to the smaller rate."""
    post = posterior_eta(model, signal)
    return float(model.eta_grid[int(np.argmax(post))])


def soft_metrics(
    model: QualityModel,
    heldout: Iterable[tuple[float, float]],
    window: float = DEFAULT_WINDOW,
) -> tuple[float, float]:
    """(soft_accuracy, soft_confidence) of posterior rate estimates.

    For each held-out (true rate, signal) pair, soft confidence is the
    posterior mass within ``window`` of the true rate, and soft accuracy is
    whether the MAP estimate lands within that window. Both are averaged
    per observation.
    """
    accs: list[float] = []
    confs: list[float] = []
    tol = window + 1e-12
    for eta_true, signal in heldout:
        post = posterior_eta(model, signal)
        near = np.abs(model.eta_grid - eta_true) <= tol
        confs.append(float(post[near].sum()))
        eta_map = model.eta_grid[int(np.argmax(post))]
        accs.append(1.0 if abs(eta_map - eta_true) <= tol else 0.0)
    if not accs:
        raise ValueError("heldout set must be nonempty")
    return float(np.mean(accs)), float(np.mean(confs))


def leave_one_seed_out(
    calibration: Mapping[float, Sequence[float]],
    window: float = DEFAULT_WINDOW,
    prior: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Cross-validated soft metrics over aligned per-seed measurements.

    For every seed index, the model is fitted on the remaining seeds and
    scored on the held-out (rate, signal) observations; metrics are
    averaged over all held-out observations.
    """
    lengths = {len(v) for v in calibration.values()}
    if len(lengths) != 1:
        raise ValueError("all rates must have the same number of seeds")
    n_seeds = lengths.pop()
    if n_seeds < 3:
        raise ValueError("leave-one-seed-out needs >= 3 seeds")
    accs: list[float] = []
    confs: list[float] = []
    for s in range(n_seeds):
        fit_data = {
            eta: [v for k, v in enumerate(vals) if k != s]
            for eta, vals in calibration.items()
        }
        model = fit_response_model(fit_data, prior=prior)
        heldout = [(eta, vals[s]) for eta, vals in calibration.items()]
        acc, conf = soft_metrics(model, heldout, window)
        accs.extend([acc] * len(heldout))
        confs.extend([conf] * len(heldout))
    return float(np.mean(accs)), float(np.mean(confs))


def constant_map_baseline(
    truths: Sequence[float],
    eta_grid: Sequence[float],
    window: float = DEFAULT_WINDOW,
) -> float:
    """Best achievable soft accuracy of a predictor that always answers one rate.

    A constant point-mass posterior makes soft accuracy and soft confidence
    coincide, so one number serves as the baseline for both.
    """
    truths = np.asarray(truths, dtype=np.float64)
    tol = window + 1e-12
    best = 0.0
    for eta in np.asarray(eta_grid, dtype=np.float64):
        best = max(best, float((np.abs(truths - eta) <= tol).mean()))
    return best


@dataclass
class LookupHistogram:
    """Row-normalized 2-D histogram of (signal bin, rate)."""

    matrix: np.ndarray
    bin_edges: np.ndarray
    rates: np.ndarray
    empty_rows: np.ndarray


def lookup_histogram(
    observations: Sequence[tuple[float, float]],
    signal_bins: int | Sequence[float] = 20,
) -> LookupHistogram:
    """Empirical p(rate | signal bin) as a row-stochastic matrix.

    Each nonempty signal-bin row is normalized to sum to one; empty rows
    are left at zero and reported in ``empty_rows``.
    """
    if not len(observations):
        raise ValueError("need at least one observation")
    signals = np.array([s for s, _ in observations], dtype=np.float64)
    etas = np.array([e for _, e in observations], dtype=np.float64)
    rates = np.unique(etas)
    if np.isscalar(signal_bins):
        lo, hi = float(signals.min()), float(signals.max())
        if hi == lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, int(signal_bins) + 1)
    else:
        edges = np.asarray(signal_bins, dtype=np.float64)
    n_bins = len(edges) - 1
    counts = np.zeros((n_bins, len(rates)))
    bin_idx = np.clip(np.searchsorted(edges, signals, side="right") - 1, 0, n_bins - 1)
    rate_idx = np.searchsorted(rates, etas)
    for b, r in zip(bin_idx, rate_idx):
        counts[b, r] += 1.0
    row_sums = counts.sum(axis=1)
    empty = row_sums == 0
    matrix = np.zeros_like(counts)
    matrix[~empty] = counts[~empty] / row_sums[~empty, None]
    return LookupHistogram(
        matrix=matrix, bin_edges=edges, rates=rates, empty_rows=empty
    )
