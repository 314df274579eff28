"""Dense-matrix primitives, keyed random streams, and moment statistics.

Everything in here is pure given its inputs: random draws are a function of
an immutable stream key, never of call order, so concurrent callers cannot
perturb each other's results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DegenerateDistributionError",
    "RngStream",
    "bimodality_coefficient",
    "gaussian_sample",
    "power_iteration",
    "sample_excess_kurtosis",
    "sample_skewness",
    "svd_max_singular",
]


class DegenerateDistributionError(ValueError):
    """Raised when a sample distribution carries no usable shape signal."""


@dataclass(frozen=True)
class RngStream:
    """Immutable key into a counter-based random stream.

    A stream is identified by ``(root_seed, run_id, purpose, step)``. Two
    streams with distinct keys yield statistically independent sequences;
    identical keys always reproduce the identical sequence. Keys are values,
    not stateful generators, so execution order (including parallel
    scheduling) cannot change any draw.
    """

    root_seed: int
    run_id: int = 0
    purpose: str = ""
    step: int = 0

    def child(self, tag: str, step: int | None = None) -> "RngStream":
        """Derive a sub-stream by appending ``tag`` to the purpose path."""
        purpose = f"{self.purpose}/{tag}" if self.purpose else tag
        return RngStream(
            root_seed=self.root_seed,
            run_id=self.run_id,
            purpose=purpose,
            step=self.step if step is None else int(step),
        )

    def at(self, step: int) -> "RngStream":
        """Same purpose, different step counter."""
        return replace(self, step=int(step))

    def _key(self) -> int:
        raw = f"{self.root_seed}|{self.run_id}|{self.purpose}|{self.step}"
        digest = hashlib.blake2s(raw.encode(), digest_size=16).digest()
        return int.from_bytes(digest, "little")

    def generator(self) -> np.random.Generator:
        """A fresh Philox generator keyed by this stream's identity."""
        return np.random.Generator(np.random.Philox(key=self._key()))


def gaussian_sample(stream: RngStream, rows: int, cols: int) -> np.ndarray:
    """I.i.d. standard-normal matrix, bit-reproducible for a given stream."""
    return stream.generator().standard_normal((rows, cols))


def _check_matrix(W: np.ndarray, name: str = "W") -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError(f"{name} contains non-finite entries")
    return W


def power_iteration(
    W: np.ndarray, u: np.ndarray, iters: int
) -> tuple[float, np.ndarray]:
    """Estimate the largest singular value of ``W`` by power iteration.

    Runs ``iters`` alternating steps ``v <- W^T u / ||.||``,
    ``u <- W v / ||.||`` starting from the supplied left vector ``u`` and
    returns ``(sigma_hat, u_next)`` where ``sigma_hat = ||W v||`` is the
    Rayleigh-quotient estimate. The estimate never exceeds the true largest
    singular value and improves monotonically in expectation with ``iters``.

    Degenerate inputs (zero matrix, or ``u`` orthogonal to the range of
    ``W``) return ``(0.0, u)`` unchanged; callers that require a usable
    estimate must treat a zero ``sigma_hat`` for a nonzero matrix as failure.
    """
    W = _check_matrix(W)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != W.shape[0]:
        raise ValueError(f"u has length {u.shape[0]}, expected {W.shape[0]}")
    if not np.all(np.isfinite(u)):
        raise ValueError("u contains non-finite entries")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not u.any():
        raise ValueError("u must be nonzero")
    if not W.any():
        return 0.0, u.copy()

    v = None
    for _ in range(iters):
        v = W.T @ u
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return 0.0, u.copy()
        v = v / nv
        u = W @ v
        nu = float(np.linalg.norm(u))
        if nu == 0.0:
            return 0.0, u.copy()
        u = u / nu
    sigma_hat = float(u @ (W @ v))
    return sigma_hat, u


def svd_max_singular(W: np.ndarray) -> float:
    """Exact largest singular value, via the Gram-matrix eigenproblem.

    Intended for small matrices (test oracles and audits); training code
    uses :func:`power_iteration` instead.
    """
    W = _check_matrix(W)
    if W.size == 0 or not W.any():
        return 0.0
    m, n = W.shape
    gram = W @ W.T if m <= n else W.T @ W
    lam_max = float(np.linalg.eigvalsh(gram)[-1])
    return float(np.sqrt(max(lam_max, 0.0)))


def _central_moments(x: np.ndarray) -> tuple[int, float, float, float]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = x.size
    centered = x - x.mean()
    m2 = float(np.mean(centered**2))
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    return n, m2, m3, m4


def _check_spread(x: np.ndarray) -> None:
    # a constant vector can carry rounding residue around its mean; moment
    # ratios on that residue are meaningless, so treat it as degenerate
    if np.ptp(x) <= 1e-12 * max(1.0, float(np.abs(x).max())):
        raise DegenerateDistributionError("zero variance")


def sample_skewness(x: np.ndarray) -> float:
    """Bias-corrected (Fisher G1) sample skewness."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size < 3:
        raise ValueError("skewness needs n >= 3")
    _check_spread(x)
    n, m2, m3, _ = _central_moments(x)
    g1 = m3 / m2**1.5
    return float(g1 * np.sqrt(n * (n - 1)) / (n - 2))


def sample_excess_kurtosis(x: np.ndarray) -> float:
    """Bias-corrected (Fisher G2) sample excess kurtosis."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size < 4:
        raise ValueError("excess kurtosis needs n >= 4")
    _check_spread(x)
    n, m2, _, m4 = _central_moments(x)
    g2 = m4 / m2**2 - 3.0
    return float(((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3)))


def bimodality_coefficient(x: np.ndarray) -> float:
    """Sarle's bimodality coefficient of a sample.

    ``(G1^2 + 1) / (G2 + 3 (n-1)^2 / ((n-2)(n-3)))`` with the bias-corrected
    sample skewness G1 and *excess* kurtosis G2. Reference points in the
    large-sample limit: uniform 5/9, Gaussian 1/3, symmetric two-point 1.

    Raises :class:`DegenerateDistributionError` on zero variance so callers
    can fall back to neutral behavior (equal fusion weights).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size < 4:
        raise ValueError("bimodality coefficient needs n >= 4")
    n = x.size
    g1 = sample_skewness(x)
    g2 = sample_excess_kurtosis(x)
    correction = 3.0 * (n - 1) ** 2 / ((n - 2) * (n - 3))
    return (g1**2 + 1.0) / (g2 + correction)
