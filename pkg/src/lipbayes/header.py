"""Two-layer Bayesian classification header: ELBO training and MC inference.

The header maps precomputed feature vectors to class logits through two
stacked variational linear layers with a ReLU in between. Training
minimizes the negative ELBO: mean cross-entropy of sampled logits plus a
beta-weighted KL regularizer toward the weight prior. Prediction draws S
Monte Carlo weight samples and summarizes the per-sample class
probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import RngStream
from .snlayer import (
    VariationalLinear,
    backward,
    forward_fixed,
    kl_gradients,
    kl_to_prior,
    sample_forward,
)
from .validation import check_feature_array, check_labels

__all__ = [
    "BayesHeader",
    "PredictiveSummary",
    "TrainConfig",
    "TrainingDivergedError",
    "elbo_loss_and_grads",
    "predict_mc",
    "summarize_mc",
    "train",
]

RHO_CLAMP = (-20.0, 10.0)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class BayesHeader:
    """Two stacked variational linear layers with a ReLU between them."""

    layer1: VariationalLinear
    layer2: VariationalLinear
    beta: float = 1e-4
    mc_samples_train: int = 1
    mc_samples_infer: int = 50

    @classmethod
    def create(
        cls,
        in_dim: int,
        n_classes: int,
        stream: RngStream,
        hidden_dim: int | None = None,
        beta: float = 1e-4,
        prior_std: float = 0.01,
        sn_iters: int = 1,
        stochastic: bool = True,
        spectral_norm: bool = True,
        mc_samples_infer: int = 50,
    ) -> "BayesHeader":
        """Build a fresh header; the hidden width defaults to the input dim."""
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        hidden = in_dim if hidden_dim is None else int(hidden_dim)
        kw = dict(
            sn_iters=sn_iters,
            prior_std=prior_std,
            stochastic=stochastic,
            spectral_norm=spectral_norm,
        )
        layer1 = VariationalLinear.create(hidden, in_dim, stream.child("l1"), **kw)
        layer2 = VariationalLinear.create(n_classes, hidden, stream.child("l2"), **kw)
        if beta < 0:
            raise ValueError("beta must be >= 0")
        return cls(
            layer1=layer1,
            layer2=layer2,
            beta=beta,
            mc_samples_infer=mc_samples_infer,
        )

    @property
    def in_dim(self) -> int:
        return self.layer1.in_dim

    @property
    def n_classes(self) -> int:
        return self.layer2.out_dim

    def clone(self) -> "BayesHeader":
        return BayesHeader(
            layer1=self.layer1.clone(),
            layer2=self.layer2.clone(),
            beta=self.beta,
            mc_samples_train=self.mc_samples_train,
            mc_samples_infer=self.mc_samples_infer,
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "l1.mu": self.layer1.mu,
            "l1.rho": self.layer1.rho,
            "l2.mu": self.layer2.mu,
            "l2.rho": self.layer2.rho,
        }

    def forward_sample(
        self, Z: np.ndarray, stream: RngStream
    ) -> tuple[np.ndarray, list]:
        """One sampled pass Z -> logits; returns caches for backprop."""
        A1, c1 = sample_forward(self.layer1, Z, stream.child("l1"))
        H = np.maximum(A1, 0.0)
        c1.relu_mask = A1 > 0.0
        logits, c2 = sample_forward(self.layer2, H, stream.child("l2"))
        return logits, [c1, c2]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE and its gradient w.r.t. logits (softmax backward included)."""
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    loss = float(-log_probs[np.arange(batch), y].mean())
    grad = softmax(logits)
    grad[np.arange(batch), y] -= 1.0
    return loss, grad / batch


def per_sample_cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(logits.shape[0]), y]


def _header_kl(header: BayesHeader) -> float:
    total = 0.0
    if header.layer1.stochastic:
        total += kl_to_prior(header.layer1)
    if header.layer2.stochastic:
        total += kl_to_prior(header.layer2)
    return total


def _elbo_with_caches(header, Z, y, stream):
    logits, caches = header.forward_sample(Z, stream)
    if not np.all(np.isfinite(logits)):
        bad = int(np.where(~np.isfinite(logits).all(axis=1))[0][0])
        raise TrainingDivergedError(f"non-finite logits at batch index {bad}")
    data_loss, grad_logits = _cross_entropy(logits, y)
    loss = data_loss + header.beta * _header_kl(header)
    if not np.isfinite(loss):
        raise TrainingDivergedError("non-finite loss")

    c1, c2 = caches
    grad_H, gmu2, grho2 = backward(header.layer2, c2, grad_logits)
    grad_A1 = grad_H * c1.relu_mask
    _, gmu1, grho1 = backward(header.layer1, c1, grad_A1)
    if header.beta > 0:
        if header.layer1.stochastic:
            kmu, krho = kl_gradients(header.layer1)
            gmu1 += header.beta * kmu
            grho1 += header.beta * krho
        if header.layer2.stochastic:
            kmu, krho = kl_gradients(header.layer2)
            gmu2 += header.beta * kmu
            grho2 += header.beta * krho
    grads = {"l1.mu": gmu1, "l1.rho": grho1, "l2.mu": gmu2, "l2.rho": grho2}
    return loss, grads, caches


def elbo_loss_and_grads(
    header: BayesHeader, Z: np.ndarray, y: np.ndarray, stream: RngStream
) -> tuple[float, dict[str, np.ndarray]]:
    """Negative-ELBO value and analytic parameter gradients for one batch.

    Loss is the batch-mean cross-entropy of one sampled logit realization
    plus ``beta`` times the summed KL of both layers to their priors.
    """
    Z = check_feature_array(Z)
    y = check_labels(y, header.n_classes)
    loss, grads, _ = _elbo_with_caches(header, Z, y, stream)
    return loss, grads


def elbo_loss_fixed(
    header: BayesHeader,
    Z: np.ndarray,
    y: np.ndarray,
    eps1: np.ndarray,
    eps2: np.ndarray,
    scale1: float,
    scale2: float,
) -> float:
    """Negative ELBO with frozen noise and normalization constants.

    This is the function the finite-difference oracle perturbs: holding
    ``eps`` and the scales fixed makes the loss a smooth deterministic
    function of the variational parameters, matching the stop-gradient
    treatment of the spectral norm in the analytic backward pass.
    """
    A1, _ = forward_fixed(header.layer1, Z, eps1, scale=scale1)
    H = np.maximum(A1, 0.0)
    logits, _ = forward_fixed(header.layer2, H, eps2, scale=scale2)
    data_loss, _ = _cross_entropy(logits, y)
    return data_loss + header.beta * _header_kl(header)


@dataclass
class TrainConfig:
    """Optimizer and schedule settings for header training."""

    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sn_iters: int | None = None

    def validate(self, n: int) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "learning_rate", "beta1", "beta2", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size > n:
            raise ValueError(f"batch_size {self.batch_size} exceeds n={n}")


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer over named arrays.

    Weight decay is applied to the means only; decaying log-stds would drag
    sigma toward 1 and fight the KL prior.
    """

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.params = params
        self.cfg = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            if name.endswith(".mu") and cfg.weight_decay > 0:
                update = update + cfg.weight_decay * p
            p -= cfg.learning_rate * update


def _clamp_rho(header: BayesHeader) -> None:
    np.clip(header.layer1.rho, *RHO_CLAMP, out=header.layer1.rho)
    np.clip(header.layer2.rho, *RHO_CLAMP, out=header.layer2.rho)


def _epoch_accuracy(header, Z, y, stream) -> float:
    logits, _ = header.forward_sample(Z, stream)
    return float((logits.argmax(axis=1) == y).mean())


def train(
    header: BayesHeader,
    Z: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
) -> tuple[BayesHeader, list[dict]]:
    """Mini-batch AdamW training of the negative ELBO.

    Returns the (mutated) header and a per-epoch history of mean batch loss
    and single-sample training accuracy. Raises
    :class:`TrainingDivergedError` if the epoch loss stays above 10x the
    initial loss for three consecutive epochs.
    """
    Z = check_feature_array(Z)
    y = check_labels(y, header.n_classes)
    if len(Z) != len(y):
        raise ValueError("feature/label length mismatch")
    config.validate(len(Z))
    if config.sn_iters is not None:
        header.layer1.sn_iters = config.sn_iters
        header.layer2.sn_iters = config.sn_iters

    stream = RngStream(root_seed=config.seed, purpose="train")
    opt = AdamW(header.parameters(), config)
    history: list[dict] = []
    n = len(Z)
    initial_loss = None
    bad_epochs = 0
    step = 0
    for epoch in range(config.epochs):
        perm = stream.child("shuffle", step=epoch).generator().permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = elbo_loss_and_grads(
                header, Z[idx], y[idx], stream.child("elbo", step=step)
            )
            opt.step(grads)
            _clamp_rho(header)
            losses.append(loss)
            step += 1
        epoch_loss = float(np.mean(losses))
        if initial_loss is None:
            initial_loss = epoch_loss
        acc = _epoch_accuracy(header, Z, y, stream.child("epoch-eval", step=epoch))
        history.append({"epoch": epoch, "loss": epoch_loss, "accuracy": acc})
        if epoch_loss > 10.0 * initial_loss:
            bad_epochs += 1
            if bad_epochs >= 3:
                raise TrainingDivergedError(
                    f"loss {epoch_loss:.4g} above 10x initial {initial_loss:.4g} "
                    f"for 3 consecutive epochs (epoch {epoch})"
                )
        else:
            bad_epochs = 0
    return header, history


@dataclass
class PredictiveSummary:
    """Per-sample Monte Carlo prediction statistics.

    ``uncertainty`` is the population standard deviation, across MC
    samples, of the probability assigned to the predicted class.
    """

    mean_probs: np.ndarray
    predicted_class: np.ndarray
    confidence: np.ndarray
    uncertainty: np.ndarray
    n_samples: int
    buffer_mode: str = "serial-shared"

    def __len__(self) -> int:
        return len(self.predicted_class)


def summarize_mc(probs: np.ndarray, buffer_mode: str = "serial-shared") -> PredictiveSummary:
    """Aggregate an (S, n, C) stack of per-sample class probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ValueError("expected probs of shape (S, n, C)")
    S = probs.shape[0]
    if S < 2:
        raise ValueError("uncertainty is undefined for fewer than 2 MC samples")
    mean_probs = probs.mean(axis=0)
    predicted = mean_probs.argmax(axis=1)
    rows = np.arange(mean_probs.shape[0])
    confidence = mean_probs[rows, predicted]
    uncertainty = probs[:, rows, predicted].std(axis=0)
    return PredictiveSummary(
        mean_probs=mean_probs,
        predicted_class=predicted,
        confidence=confidence,
        uncertainty=uncertainty,
        n_samples=S,
        buffer_mode=buffer_mode,
    )


def predict_mc(
    header: BayesHeader,
    Z: np.ndarray,
    S: int | None = None,
    stream: RngStream | None = None,
) -> PredictiveSummary:
    """Monte Carlo predictive inference with S sampled forward passes.

    Draws are serialized so every pass refines the header's shared power
    iteration buffers; outputs are bit-reproducible for a fixed stream.
    """
    Z = check_feature_array(Z)
    S = header.mc_samples_infer if S is None else int(S)
    if S < 2:
        raise ValueError("uncertainty is undefined for fewer than 2 MC samples")
    if stream is None:
        stream = RngStream(root_seed=0, purpose="predict")
    n = Z.shape[0]
    probs = np.empty((S, n, header.n_classes))
    for s in range(S):
        logits, _ = header.forward_sample(Z, stream.child("mc", step=s))
        probs[s] = softmax(logits)
    return summarize_mc(probs)
