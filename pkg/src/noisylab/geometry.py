"""Feature-space geometry: envelope estimation, class centroids, virtual
outlier synthesis, and geometric filtering.

The envelope is the axis-aligned box spanned by per-dimension extrema of
the support features. Candidate outliers are drawn inside it by one of
four strategies and kept only if their minimum Euclidean distance to
every class centroid exceeds the rejection radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySupportError, ParameterError

SAMPLERS = ("uniform", "gaussian", "perturbation", "hybrid")

#: isotropic noise scale for the perturbation sampler, as a fraction of
#: the mean envelope edge length
PERTURBATION_SCALE = 0.1


@dataclass
class Envelope:
    low: np.ndarray  # (d,)
    high: np.ndarray  # (d,)
    epoch: int | None = None

    def __post_init__(self):
        if (self.low > self.high).any():
            raise ParameterError("envelope low must not exceed high")

    @property
    def edge_lengths(self) -> np.ndarray:
        return self.high - self.low

    def log_volume(self, floor: float = 1e-12) -> float:
        """Sum of log edge lengths; zero-width edges are floored."""
        return float(np.log(np.maximum(self.edge_lengths, floor)).sum())

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        return ((points >= self.low - atol) & (points <= self.high + atol)).all(axis=1)


@dataclass
class CentroidSet:
    class_ids: np.ndarray  # (c,)
    centers: np.ndarray  # (c, d)
    epoch: int | None = None

    def center_for(self, class_id: int) -> np.ndarray:
        idx = np.nonzero(self.class_ids == class_id)[0]
        if len(idx) == 0:
            raise KeyError(f"no centroid for class {class_id}")
        return self.centers[idx[0]]


@dataclass
class OutlierBatch:
    features: np.ndarray  # (m, d) accepted virtual outliers
    n_candidates: int
    n_accepted: int
    sampler: str
    reject_radius: float

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_candidates if self.n_candidates else 0.0


def estimate_envelope(features: np.ndarray, epoch: int | None = None) -> Envelope:
    """Component-wise min/max box over the support features."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.size == 0:
        raise EmptySupportError("no support features; skip geometry this epoch")
    return Envelope(features.min(axis=0), features.max(axis=0), epoch)


def class_centroids(features: np.ndarray, labels: np.ndarray,
                    epoch: int | None = None) -> CentroidSet:
    """Arithmetic mean feature vector per class present in the support."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    if features.size == 0:
        raise EmptySupportError("no support features; skip geometry this epoch")
    class_ids = np.unique(labels)
    centers = np.stack([features[labels == c].mean(axis=0) for c in class_ids])
    return CentroidSet(class_ids, centers, epoch)


def _sample_uniform(envelope: Envelope, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(envelope.low, envelope.high, size=(n, len(envelope.low)))


def _sample_gaussian(envelope, centroids, features, labels, n, rng) -> np.ndarray:
    # per-class Gaussian with diagonal covariance, class counts proportional
    # to class sizes; samples clipped into the envelope
    counts = np.array([(labels == c).sum() for c in centroids.class_ids], dtype=float)
    alloc = np.floor(n * counts / counts.sum()).astype(int)
    for i in range(n - alloc.sum()):  # distribute the remainder
        alloc[i % len(alloc)] += 1
    out = []
    for c, m, n_c in zip(centroids.class_ids, centroids.centers, alloc):
        if n_c == 0:
            continue
        std = features[labels == c].std(axis=0)
        out.append(rng.normal(m, np.maximum(std, 0.0), size=(n_c, len(m))))
    cand = np.vstack(out)
    return np.clip(cand, envelope.low, envelope.high)


def _sample_perturbation(envelope, features, n, rng) -> np.ndarray:
    idx = rng.integers(0, len(features), size=n)
    scale = PERTURBATION_SCALE * float(envelope.edge_lengths.mean())
    cand = features[idx] + rng.normal(0.0, 1.0, size=(n, features.shape[1])) * scale
    return np.clip(cand, envelope.low, envelope.high)


def sample_candidates(envelope: Envelope, centroids: CentroidSet, features: np.ndarray,
                      labels: np.ndarray, n_candidates: int, strategy: str,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw outlier candidates inside the envelope by the given strategy."""
    if n_candidates < 1:
        raise ParameterError("n_candidates must be >= 1")
    if strategy not in SAMPLERS:
        raise ParameterError(f"unknown sampler {strategy!r}; choose from {SAMPLERS}")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if strategy == "uniform":
        return _sample_uniform(envelope, n_candidates, rng)
    if strategy == "gaussian":
        return _sample_gaussian(envelope, centroids, features, labels, n_candidates, rng)
    if strategy == "perturbation":
        return _sample_perturbation(envelope, features, n_candidates, rng)
    # hybrid: equal thirds, remainder to uniform
    third = n_candidates // 3
    n_uni = n_candidates - 2 * third
    parts = [_sample_uniform(envelope, n_uni, rng)]
    if third:
        parts.append(_sample_gaussian(envelope, centroids, features, labels, third, rng))
        parts.append(_sample_perturbation(envelope, features, third, rng))
    return np.vstack(parts)


def min_centroid_distances(points: np.ndarray, centroids: CentroidSet) -> np.ndarray:
    points = np.atleast_2d(points)
    diffs = points[:, None, :] - centroids.centers[None, :, :]
    return np.sqrt((diffs ** 2).sum(axis=2)).min(axis=1)


def filter_outliers(candidates: np.ndarray, centroids: CentroidSet, reject_radius: float,
                    sampler: str = "uniform") -> OutlierBatch:
    """Keep candidates strictly farther than the rejection radius from every centroid."""
    if len(centroids.centers) == 0:
        raise ParameterError("centroid set must be nonempty")
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    d_min = min_centroid_distances(candidates, centroids)
    keep = d_min > reject_radius
    accepted = candidates[keep]
    return OutlierBatch(accepted, n_candidates=len(candidates), n_accepted=len(accepted),
                        sampler=sampler, reject_radius=reject_radius)


def mean_centroid_distance(centroids: CentroidSet) -> float | None:
    """Mean pairwise distance between centroids; None with fewer than two."""
    c = centroids.centers
    if len(c) < 2:
        return None
    diffs = c[:, None, :] - c[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    iu = np.triu_indices(len(c), k=1)
    return float(dist[iu].mean())
