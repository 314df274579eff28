"""Spectrally normalized variational linear layer.

The layer holds a fully factorized Gaussian over its weight matrix,
parameterized by a mean ``mu`` and a log standard deviation ``rho``
(``sigma = exp(rho)``). Each forward pass samples one weight realization
``W = mu + exp(rho) * eps`` and divides it by a power-iteration estimate of
its largest singular value, so the *entire sampled distribution* is shrunk
isotropically: both the effective mean and the effective std are scaled by
the same factor, which preserves the entrywise signal-to-noise ratio while
keeping every realization approximately 1-Lipschitz.

There is no bias term: an affine offset would not be controlled by the
spectral norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import RngStream, gaussian_sample, power_iteration

__all__ = [
    "ForwardCache",
    "NonFiniteActivationError",
    "PowerIterationError",
    "VariationalLinear",
    "backward",
    "forward_fixed",
    "kl_to_prior",
    "sample_forward",
]

DEFAULT_PRIOR_STD = 0.01
DEFAULT_EPS_SN = 1e-12


class PowerIterationError(RuntimeError):
    """Spectral-norm estimate collapsed to zero on a nonzero weight sample."""


class NonFiniteActivationError(RuntimeError):
    """A forward pass produced non-finite activations."""


@dataclass
class VariationalLinear:
    """One stochastic linear layer with weight-distribution normalization.

    Attributes
    ----------
    mu, rho : (out_dim, in_dim) float64 arrays
        Variational mean and log-std of each weight.
    u_buffer : (out_dim,) float64 array
        Persistent left singular vector refined by every forward pass.
    sn_iters : int
        Power-iteration steps per forward call. One step usually suffices
        during training because consecutive calls keep refining the same
        buffer; oracles use 50.
    eps_sn : float
        Guard added to the spectral-norm estimate before dividing.
    prior_std : float
        Std of the zero-mean Gaussian prior on every weight.
    stochastic : bool
        When False the layer is a plain deterministic linear map ``W = mu``.
    spectral_norm : bool
        When False no normalization is applied (the plain Bayesian variant).
    """

    mu: np.ndarray
    rho: np.ndarray
    u_buffer: np.ndarray
    sn_iters: int = 1
    eps_sn: float = DEFAULT_EPS_SN
    prior_std: float = DEFAULT_PRIOR_STD
    stochastic: bool = True
    spectral_norm: bool = True

    @classmethod
    def create(
        cls,
        out_dim: int,
        in_dim: int,
        stream: RngStream,
        sn_iters: int = 1,
        eps_sn: float = DEFAULT_EPS_SN,
        prior_std: float = DEFAULT_PRIOR_STD,
        stochastic: bool = True,
        spectral_norm: bool = True,
    ) -> "VariationalLinear":
        """Fresh layer: mu ~ N(0, 1/in_dim), rho = ln(prior_std), seeded u."""
        mu = gaussian_sample(stream.child("mu"), out_dim, in_dim) / np.sqrt(in_dim)
        rho = np.full((out_dim, in_dim), np.log(prior_std))
        u = gaussian_sample(stream.child("u"), out_dim, 1).reshape(-1)
        u = u / np.linalg.norm(u)
        return cls(
            mu=mu,
            rho=rho,
            u_buffer=u,
            sn_iters=sn_iters,
            eps_sn=eps_sn,
            prior_std=prior_std,
            stochastic=stochastic,
            spectral_norm=spectral_norm,
        )

    @property
    def out_dim(self) -> int:
        return self.mu.shape[0]

    @property
    def in_dim(self) -> int:
        return self.mu.shape[1]

    def sigma(self) -> np.ndarray:
        return np.exp(self.rho)

    def clone(self) -> "VariationalLinear":
        return VariationalLinear(
            mu=self.mu.copy(),
            rho=self.rho.copy(),
            u_buffer=self.u_buffer.copy(),
            sn_iters=self.sn_iters,
            eps_sn=self.eps_sn,
            prior_std=self.prior_std,
            stochastic=self.stochastic,
            spectral_norm=self.spectral_norm,
        )


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, needed by :func:`backward`.

    Invariant: ``W_tilde * scale == W`` entrywise, where ``scale`` is
    ``sigma_hat + eps_sn`` (or exactly 1.0 with normalization disabled).
    """

    Z: np.ndarray
    eps: np.ndarray
    W: np.ndarray
    sigma_hat: float | None
    scale: float
    W_tilde: np.ndarray
    relu_mask: np.ndarray | None = field(default=None)


def _finish_forward(layer, Z, eps, W) -> tuple[np.ndarray, ForwardCache]:
    if layer.spectral_norm:
        sigma_hat, u_next = power_iteration(W, layer.u_buffer, layer.sn_iters)
        layer.u_buffer = u_next
        if sigma_hat == 0.0 and W.any():
            raise PowerIterationError(
                "spectral-norm estimate is 0 for a nonzero weight sample; "
                "u_buffer may have lost alignment with the range of W"
            )
        scale = sigma_hat + layer.eps_sn
    else:
        sigma_hat = None
        scale = 1.0
    W_tilde = W / scale
    A = Z @ W_tilde.T
    if not np.all(np.isfinite(A)):
        bad = np.where(~np.isfinite(A).all(axis=1))[0]
        raise NonFiniteActivationError(
            f"non-finite activations for batch rows {bad.tolist()[:8]} "
            f"(sigma_hat={sigma_hat!r}, |W|_max={np.abs(W).max():.3e})"
        )
    return A, ForwardCache(Z=Z, eps=eps, W=W, sigma_hat=sigma_hat, scale=scale, W_tilde=W_tilde)


def sample_forward(
    layer: VariationalLinear, Z: np.ndarray, stream: RngStream
) -> tuple[np.ndarray, ForwardCache]:
    """Sample one weight realization and apply the normalized layer.

    Draws ``eps`` once, forms ``W = mu + exp(rho) * eps``, refines the
    persistent ``u_buffer`` with ``sn_iters`` power-iteration steps on this
    sampled ``W``, and returns ``A = Z @ (W / (sigma_hat + eps_sn)).T``
    together with the cache for the backward pass. Repeated Monte Carlo
    calls keep refining the same buffer.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != layer.in_dim:
        raise ValueError(
            f"input batch has shape {Z.shape}, expected (batch, {layer.in_dim})"
        )
    m, n = layer.mu.shape
    if layer.stochastic:
        eps = gaussian_sample(stream, m, n)
        W = layer.mu + np.exp(layer.rho) * eps
    else:
        eps = np.zeros((m, n))
        W = layer.mu.copy()
    return _finish_forward(layer, Z, eps, W)


def forward_fixed(
    layer: VariationalLinear,
    Z: np.ndarray,
    eps: np.ndarray,
    scale: float | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Forward with caller-supplied noise (and optionally a frozen scale).

    Does not touch ``u_buffer``; used by gradient checks, which must hold
    both ``eps`` and the normalization constant fixed while perturbing
    parameters, and by deterministic replays.
    """
    Z = np.asarray(Z, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    W = layer.mu + np.exp(layer.rho) * eps if layer.stochastic else layer.mu.copy()
    if scale is not None:
        W_tilde = W / scale
        A = Z @ W_tilde.T
        sigma_hat = scale - layer.eps_sn if layer.spectral_norm else None
        return A, ForwardCache(
            Z=Z, eps=eps, W=W, sigma_hat=sigma_hat, scale=scale, W_tilde=W_tilde
        )
    saved = layer.u_buffer.copy()
    out = _finish_forward(layer, Z, eps, W)
    layer.u_buffer = saved
    return out


def kl_to_prior(layer: VariationalLinear) -> float:
    """Exact KL divergence from the factorized posterior to N(0, prior_std^2).

    Per weight: ``-rho + ln(s0) + (exp(2 rho) + mu^2) / (2 s0^2) - 1/2``,
    summed over all entries. Zero exactly when ``mu = 0`` and
    ``rho = ln(s0)`` everywhere; nonnegative otherwise.
    """
    s0 = layer.prior_std
    terms = (
        -layer.rho
        + np.log(s0)
        + (np.exp(2.0 * layer.rho) + layer.mu**2) / (2.0 * s0**2)
        - 0.5
    )
    return float(terms.sum())


def kl_gradients(layer: VariationalLinear) -> tuple[np.ndarray, np.ndarray]:
    """d KL / d mu and d KL / d rho for :func:`kl_to_prior`."""
    s0 = layer.prior_std
    grad_mu = layer.mu / s0**2
    grad_rho = -1.0 + np.exp(2.0 * layer.rho) / s0**2
    return grad_mu, grad_rho


def backward(
    layer: VariationalLinear, cache: ForwardCache, grad_A: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a scalar loss through one cached forward pass.

    The normalization constant is treated as a constant (stop-gradient), so
    ``dW_tilde/dmu = I / scale`` and ``dW_tilde/drho = diag(exp(rho) * eps)
    / scale``; the rho gradient carries the reparameterization factor
    ``dsigma/drho = exp(rho)``.

    Returns ``(grad_Z, grad_mu, grad_rho)``.
    """
    grad_A = np.asarray(grad_A, dtype=np.float64)
    if grad_A.shape != (cache.Z.shape[0], layer.out_dim):
        raise ValueError(
            f"grad_A has shape {grad_A.shape}, expected "
            f"({cache.Z.shape[0]}, {layer.out_dim})"
        )
    if cache.W.shape != layer.mu.shape:
        raise ValueError("cache does not match this layer")
    grad_Z = grad_A @ cache.W_tilde
    grad_W = (grad_A.T @ cache.Z) / cache.scale
    grad_mu = grad_W
    if layer.stochastic:
        grad_rho = grad_W * (np.exp(layer.rho) * cache.eps)
    else:
        grad_rho = np.zeros_like(layer.rho)
    return grad_Z, grad_mu, grad_rho
