"""Co-teaching: two peer headers exchanging their small-loss samples.

Each peer ranks the batch by its own per-sample loss, keeps the presumed
clean fraction, and hands the kept samples to the other peer for the
parameter update. The discarded ("forget") fraction comes either from a
fixed epoch schedule toward an assumed noise rate, or adaptively from the
peers' prediction disagreement on the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .header import (
    AdamW,
    BayesHeader,
    TrainConfig,
    _clamp_rho,
    _elbo_with_caches,
    per_sample_cross_entropy,
)
from .numkit import RngStream
from .validation import check_feature_array, check_labels

__all__ = [
    "CoteachState",
    "adaptive_forget_rate",
    "coteach_step",
    "coteach_train",
    "scheduled_keep_rate",
]

R0_DEFAULT = 0.1
ALPHA_DEFAULT = 0.2
RMAX_DEFAULT = 0.5


def adaptive_forget_rate(
    pred_f: np.ndarray,
    pred_g: np.ndarray,
    r0: float = R0_DEFAULT,
    alpha: float = ALPHA_DEFAULT,
    rmax: float = RMAX_DEFAULT,
) -> float:
    """min(r0 + alpha * disagreement_fraction, rmax) for one mini-batch."""
    pred_f = np.asarray(pred_f)
    pred_g = np.asarray(pred_g)
    if pred_f.shape != pred_g.shape or pred_f.ndim != 1:
        raise ValueError("prediction vectors must be 1-D and of equal length")
    if pred_f.size == 0:
        raise ValueError("empty batch")
    disagreement = float((pred_f != pred_g).mean())
    return min(r0 + alpha * disagreement, rmax)


def scheduled_keep_rate(t: int, tau: float, t_k: int) -> float:
    """Kept fraction 1 - tau * min(t / t_k, 1) at epoch t.

    The linear ramp reaches the assumed noise rate ``tau`` after ``t_k``
    epochs; the forget rate is one minus this value.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t_k <= 0:
        raise ValueError("t_k must be positive")
    return 1.0 - tau * min(t / t_k, 1.0)


@dataclass
class CoteachState:
    """Two peers plus the forget-rate policy and optimizer state."""

    header_f: BayesHeader
    header_g: BayesHeader
    r0: float = R0_DEFAULT
    alpha: float = ALPHA_DEFAULT
    rmax: float = RMAX_DEFAULT
    tau: float = 0.15
    t_k: int = 10
    mode: str = "adaptive"
    epoch: int = 0
    step_count: int = 0
    opt_f: AdamW | None = None
    opt_g: AdamW | None = None
    kept_floor_hits: int = field(default=0)

    def __post_init__(self):
        if not 0.0 <= self.r0 <= self.rmax <= 1.0:
            raise ValueError("need 0 <= r0 <= rmax <= 1")
        if self.mode not in ("adaptive", "scheduled"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def ensure_optimizers(self, config: TrainConfig) -> None:
        if self.opt_f is None:
            self.opt_f = AdamW(self.header_f.parameters(), config)
        if self.opt_g is None:
            self.opt_g = AdamW(self.header_g.parameters(), config)


def kept_indices(losses: np.ndarray, ids: np.ndarray, forget_rate: float) -> np.ndarray:
    """Indices of the small-loss kept set: max(1, floor((1-forget)*B)) samples.

    Ordering is by (loss, id), so the selection is invariant to batch
    permutation and deterministic under loss ties.
    """
    batch = len(losses)
    keep = max(1, math.floor((1.0 - forget_rate) * batch))
    order = np.lexsort((ids, losses))
    return np.sort(order[:keep])


def coteach_step(
    state: CoteachState,
    Z: np.ndarray,
    y: np.ndarray,
    ids: np.ndarray,
    stream_f: RngStream,
    stream_g: RngStream,
    config: TrainConfig,
) -> dict:
    """One exchange step: select small-loss samples, update on the peer's picks."""
    Z = check_feature_array(Z)
    y = check_labels(y, state.header_f.n_classes)
    if len(Z) == 0:
        raise ValueError("empty batch")
    ids = np.asarray(ids, dtype=np.int64)
    state.ensure_optimizers(config)

    logits_f, _ = state.header_f.forward_sample(Z, stream_f.child("select"))
    logits_g, _ = state.header_g.forward_sample(Z, stream_g.child("select"))
    losses_f = per_sample_cross_entropy(logits_f, y)
    losses_g = per_sample_cross_entropy(logits_g, y)

    if state.mode == "adaptive":
        forget = adaptive_forget_rate(
            logits_f.argmax(axis=1),
            logits_g.argmax(axis=1),
            state.r0,
            state.alpha,
            state.rmax,
        )
    else:
        forget = 1.0 - scheduled_keep_rate(state.epoch, state.tau, state.t_k)

    kept_f = kept_indices(losses_f, ids, forget)
    kept_g = kept_indices(losses_g, ids, forget)
    if forget >= 1.0:
        state.kept_floor_hits += 1

    # each peer updates on the samples the *other* peer kept
    loss_f, grads_f, _ = _elbo_with_caches(
        state.header_f, Z[kept_g], y[kept_g], stream_f.child("update")
    )
    loss_g, grads_g, _ = _elbo_with_caches(
        state.header_g, Z[kept_f], y[kept_f], stream_g.child("update")
    )
    state.opt_f.step(grads_f)
    state.opt_g.step(grads_g)
    _clamp_rho(state.header_f)
    _clamp_rho(state.header_g)
    state.step_count += 1
    return {
        "forget_rate": forget,
        "kept_f": kept_f,
        "kept_g": kept_g,
        "loss_f": loss_f,
        "loss_g": loss_g,
    }


def coteach_train(
    state: CoteachState,
    Z: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
) -> tuple[CoteachState, list[dict]]:
    """Epoch loop over shuffled mini-batches of :func:`coteach_step`.

    Both peers see the same batch order; forget rates follow the state's
    mode. History records per-epoch mean losses and the mean forget rate.
    """
    Z = check_feature_array(Z)
    y = check_labels(y, state.header_f.n_classes)
    config.validate(len(Z))
    stream = RngStream(root_seed=config.seed, purpose="coteach")
    ids = np.arange(len(Z))
    history: list[dict] = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        perm = stream.child("shuffle", step=epoch).generator().permutation(len(Z))
        losses_f, losses_g, forgets = [], [], []
        for start in range(0, len(Z), config.batch_size):
            idx = perm[start : start + config.batch_size]
            step_stream = stream.child("step", step=state.step_count)
            info = coteach_step(
                state,
                Z[idx],
                y[idx],
                ids[idx],
                step_stream.child("f"),
                step_stream.child("g"),
                config,
            )
            losses_f.append(info["loss_f"])
            losses_g.append(info["loss_g"])
            forgets.append(info["forget_rate"])
        history.append(
            {
                "epoch": epoch,
                "loss_f": float(np.mean(losses_f)),
                "loss_g": float(np.mean(losses_g)),
                "forget_rate": float(np.mean(forgets)),
            }
        )
    return state, history
