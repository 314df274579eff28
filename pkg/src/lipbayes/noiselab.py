"""Label-corruption generators and a synthetic feature-dataset factory.

Two corruption regimes are provided: uniform random flips, and semantically
proximal errors that relabel samples lying closest to clusters of another
class (the hard, structured regime). Both record an auditable plan that can
be replayed in reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numkit import RngStream
from .validation import check_feature_array, check_labels

__all__ = [
    "FeatureDataset",
    "NoisePlan",
    "NoisePlanEntry",
    "cosine_distances",
    "inject_random",
    "inject_spce",
    "make_blobs",
    "make_confusable_blobs",
    "round_half_up",
]


@dataclass
class FeatureDataset:
    """Feature vectors with integer labels and stable per-sample ids."""

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = check_feature_array(self.features, "features")
        self.labels = check_labels(self.labels, self.n_classes, "labels")
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not (len(self.features) == len(self.labels) == len(self.ids)):
            raise ValueError("features, labels and ids must have equal length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("ids must be unique")

    @classmethod
    def from_arrays(cls, features, labels, n_classes=None) -> "FeatureDataset":
        labels = check_labels(labels)
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if len(labels) else 0
        return cls(
            features=features,
            labels=labels,
            ids=np.arange(len(labels)),
            n_classes=int(n_classes),
        )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def copy(self) -> "FeatureDataset":
        return FeatureDataset(
            features=self.features.copy(),
            labels=self.labels.copy(),
            ids=self.ids.copy(),
            n_classes=self.n_classes,
        )


@dataclass(frozen=True)
class NoisePlanEntry:
    sample_id: int
    original: int
    corrupted: int
    mechanism: str


@dataclass
class NoisePlan:
    """Record of which labels were corrupted, and how."""

    entries: list[NoisePlanEntry] = field(default_factory=list)
    target_rate: float = 0.0

    def __len__(self) -> int:
        return len(self.entries)

    def corrupted_ids(self) -> np.ndarray:
        return np.array([e.sample_id for e in self.entries], dtype=np.int64)

    def truth_mask(self, ids: np.ndarray) -> np.ndarray:
        """Boolean mask over ``ids`` marking the corrupted samples."""
        bad = set(int(e.sample_id) for e in self.entries)
        return np.array([int(i) in bad for i in ids], dtype=bool)

    def undo(self, ds: FeatureDataset) -> FeatureDataset:
        """Restore the original labels on a corrupted dataset copy."""
        restored = ds.copy()
        index_of = {int(i): k for k, i in enumerate(restored.ids)}
        for e in self.entries:
            k = index_of[e.sample_id]
            if restored.labels[k] != e.corrupted:
                raise ValueError(
                    f"plan does not match dataset at id {e.sample_id}"
                )
            restored.labels[k] = e.original
        return restored


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _plan_size(eta: float, n: int) -> int:
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    k = round_half_up(eta * n)
    if k > n:
        raise ValueError(f"eta*n rounds to {k} > n={n}")
    return k


def inject_random(
    ds: FeatureDataset, eta: float, stream: RngStream
) -> tuple[FeatureDataset, NoisePlan]:
    """Flip round(eta*n) uniformly chosen labels to uniformly chosen wrong classes."""
    if ds.n_classes < 2:
        raise ValueError("need at least 2 classes to inject noise")
    k = _plan_size(eta, len(ds))
    corrupted = ds.copy()
    plan = NoisePlan(target_rate=eta)
    if k == 0:
        return corrupted, plan
    gen = stream.child("random-noise").generator()
    picks = gen.choice(len(ds), size=k, replace=False)
    offsets = gen.integers(0, ds.n_classes - 1, size=k)
    for idx, off in zip(picks, offsets):
        old = int(corrupted.labels[idx])
        new = int(off if off < old else off + 1)
        corrupted.labels[idx] = new
        plan.entries.append(
            NoisePlanEntry(int(corrupted.ids[idx]), old, new, "random")
        )
    return corrupted, plan


def cosine_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise cosine distances 1 - cos(x_i, x_j); zero vectors guarded."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-300)
    U = X / norms
    sim = np.clip(U @ U.T, -1.0, 1.0)
    return 1.0 - sim


def inject_spce(
    ds: FeatureDataset, eta: float, K: int, stream: RngStream
) -> tuple[FeatureDataset, NoisePlan]:
    """Semantically proximal corruption via cross-class nearest neighbors.

    Every sample contributes candidate pairs with its K cosine-nearest
    neighbors of a *different* class; pairs are taken globally in order of
    increasing distance, and each taken pair relabels its first sample to
    the neighbor's class (one-directional; mutual closest pairs therefore
    swap). A sample is relabeled at most once. Candidate generation and the
    assigned classes use the original labels throughout.

    The ``stream`` argument mirrors :func:`inject_random` for uniform
    dispatch; the procedure itself is deterministic (ties break on ids).
    """
    if ds.n_classes < 2:
        raise ValueError("need at least 2 classes to inject noise")
    if K < 1:
        raise ValueError("K must be >= 1")
    n = len(ds)
    k_target = _plan_size(eta, n)
    corrupted = ds.copy()
    plan = NoisePlan(target_rate=eta)
    if k_target == 0:
        return corrupted, plan

    D = cosine_distances(ds.features)
    labels = ds.labels
    candidates: list[tuple[float, int, int]] = []
    for i in range(n):
        cross = np.where(labels != labels[i])[0]
        if cross.size == 0:
            continue
        d_cross = D[i, cross]
        take = min(K, cross.size)
        part = np.argpartition(d_cross, take - 1)[:take]
        order = part[np.lexsort((cross[part], d_cross[part]))]
        for j_local in order:
            j = int(cross[j_local])
            candidates.append((float(D[i, j]), i, j))
    candidates.sort(key=lambda t: (t[0], t[1], t[2]))

    relabeled: set[int] = set()
    for dist, i, j in candidates:
        if len(plan) >= k_target:
            break
        if i in relabeled:
            continue
        old = int(labels[i])
        new = int(labels[j])
        corrupted.labels[i] = new
        relabeled.add(i)
        plan.entries.append(NoisePlanEntry(int(ds.ids[i]), old, new, "spce"))
    if len(plan) < k_target:
        raise ValueError(
            f"only {len(plan)} cross-class candidates available, "
            f"{k_target} required"
        )
    return corrupted, plan


def make_blobs(
    n: int,
    d: int,
    n_classes: int,
    spread: float,
    separation: float,
    stream: RngStream,
) -> FeatureDataset:
    """Gaussian class clusters with seeded centers and near-balanced counts.

    Centers are drawn from N(0, separation^2 I), points from
    N(center, spread^2 I). Class counts differ by at most one; sample order
    is shuffled so class blocks do not leak into batch structure.
    """
    if n < n_classes:
        raise ValueError("need at least one sample per class")
    if spread < 0 or separation < 0:
        raise ValueError("spread and separation must be >= 0")
    gen = stream.child("blobs").generator()
    centers = separation * gen.standard_normal((n_classes, d))
    return _assemble_blobs(n, centers, spread, gen)


def make_confusable_blobs(
    n: int,
    d: int,
    n_classes: int,
    spread: float,
    stream: RngStream,
    pair_angle: float = 0.22,
    pair_radii: tuple[float, float] = (10.0, 16.0),
    base_radius: float = 14.0,
) -> FeatureDataset:
    """Blobs with one planted pair of angularly close, unequal-radius clusters.

    Classes 0 and 1 sit ``pair_angle`` radians apart at different distances
    from the origin; the remaining cluster centers are random directions at
    ``base_radius``. Under cosine geometry the wider-angle (inner) cluster
    spills into the outer one asymmetrically, which makes proximity-targeted
    label corruption between the pair genuinely harmful while leaving
    uniform random corruption diluted. This is the hard benchmark for the
    structured-noise severity studies.
    """
    if n < n_classes:
        raise ValueError("need at least one sample per class")
    if n_classes < 2:
        raise ValueError("need at least 2 classes for a confusable pair")
    gen = stream.child("confusable").generator()
    dirs = gen.standard_normal((n_classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ortho = dirs[1] - (dirs[1] @ dirs[0]) * dirs[0]
    ortho /= np.linalg.norm(ortho)
    dirs[1] = np.cos(pair_angle) * dirs[0] + np.sin(pair_angle) * ortho
    radii = np.full(n_classes, base_radius)
    radii[0], radii[1] = pair_radii
    centers = dirs * radii[:, None]
    return _assemble_blobs(n, centers, spread, gen)


def _assemble_blobs(n, centers, spread, gen) -> FeatureDataset:
    n_classes = len(centers)
    base = n // n_classes
    counts = np.full(n_classes, base)
    counts[: n - base * n_classes] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    points = centers[labels] + spread * gen.standard_normal((n, len(centers[0])))
    perm = gen.permutation(n)
    return FeatureDataset(
        features=points[perm],
        labels=labels[perm],
        ids=np.arange(n),
        n_classes=n_classes,
    )
