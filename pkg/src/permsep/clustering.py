"""K-means over embedding rows and binary mask construction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, TooFewPoints
from .network import EmbeddingMatrix, MaskSet
from .util import rng_for

MAX_LLOYD_ITERS = 100


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (N,) ints in [0, k)
    centroids: np.ndarray  # (k, D)
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


def _as_points(v) -> np.ndarray:
    if isinstance(v, EmbeddingMatrix):
        return v.rows
    pts = np.asarray(v, dtype=np.float64)
    if pts.ndim != 2:
        raise ShapeMismatch(f"expected (N, D) points, got {pts.shape}")
    return pts


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    p_sq = (points * points).sum(axis=1)
    c_sq = (centroids * centroids).sum(axis=1)
    d = p_sq[:, None] + c_sq[None, :] - 2.0 * points @ centroids.T
    return np.maximum(d, 0.0)


def _plusplus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[:1]).min(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining mass at the chosen centroids; pick uniformly
            centroids[i] = points[rng.integers(n)]
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r))
            centroids[i] = points[min(idx, n - 1)]
        closest = np.minimum(closest, _sq_dists(points, centroids[i:i + 1]).min(axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    k = centroids.shape[0]
    labels = None
    history: list[float] = []
    for _ in range(MAX_LLOYD_ITERS):
        d = _sq_dists(points, centroids)
        new_labels = d.argmin(axis=1)
        history.append(float(d[np.arange(points.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = points[labels == c]
            if members.shape[0] > 0:
                centroids[c] = members.mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its
                # own assigned centroid
                dist_own = d[np.arange(points.shape[0]), labels]
                centroids[c] = points[dist_own.argmax()]
    d = _sq_dists(points, centroids)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(points.shape[0]), labels].sum())
    return labels, centroids, inertia, history


def kmeans(v, k: int, seed: int, restarts: int = 10) -> ClusterAssignment:
    """Best-of-restarts k-means with k-means++ seeding. Deterministic
    for a fixed seed; ties across restarts go to the earliest."""
    points = _as_points(v)
    n = points.shape[0]
    if k < 1:
        raise TooFewPoints("k must be >= 1")
    if n < k:
        raise TooFewPoints(f"{n} points for k={k}")
    best: ClusterAssignment | None = None
    for r in range(restarts):
        rng = rng_for(seed, "kmeans", r)
        centroids = _plusplus_seed(points, k, rng)
        labels, centroids, inertia, history = _lloyd(points, centroids.copy())
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels, centroids, inertia, history)
    return best


def cluster_embeddings(
    v: EmbeddingMatrix,
    k: int,
    seed: int,
    restarts: int = 10,
    weights: np.ndarray | None = None,
    exclude_silent: bool = True,
) -> ClusterAssignment:
    """Cluster bin embeddings, optionally leaving silent bins (weight 0)
    out of the centroid fit and assigning them to their nearest centroid
    afterwards. Returns labels for every bin either way."""
    points = _as_points(v)
    if weights is None or not exclude_silent:
        return kmeans(points, k, seed, restarts)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (points.shape[0],):
        raise ShapeMismatch("weights must be one scalar per embedding row")
    active = weights > 0.0
    if active.sum() < k:
        return kmeans(points, k, seed, restarts)
    fit = kmeans(points[active], k, seed, restarts)
    labels = np.empty(points.shape[0], dtype=fit.labels.dtype)
    labels[active] = fit.labels
    silent = ~active
    if silent.any():
        d = _sq_dists(points[silent], fit.centroids)
        labels[silent] = d.argmin(axis=1)
    return ClusterAssignment(labels, fit.centroids, fit.inertia, fit.inertia_history)


def masks_from_clusters(assign: ClusterAssignment, t_len: int, n_freq: int) -> MaskSet:
    """Binary membership masks: M_s(t,f) = 1 iff bin tf landed in
    cluster s."""
    labels = np.asarray(assign.labels)
    if labels.shape[0] != t_len * n_freq:
        raise ShapeMismatch(
            f"{labels.shape[0]} labels for {t_len}x{n_freq} bins"
        )
    s_count = assign.centroids.shape[0]
    masks = np.zeros((s_count, t_len * n_freq))
    masks[labels, np.arange(labels.shape[0])] = 1.0
    return MaskSet(masks.reshape(s_count, t_len, n_freq), scenario=s_count)
