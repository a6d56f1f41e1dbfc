"""Spatial block maxima: k-means clusters of covariates, one maximum per cluster.

Individuals with similar covariates stand in for repeated draws of a single
individual, so the per-cluster maximum outcome approximates a block maximum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .dataset import CausalDataset
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class MaxSampleResult:
    data: CausalDataset        # one record per cluster
    indices: np.ndarray        # original row index of each emitted record
    cluster_count: int
    block_size: int
    max_intra_radius: float    # raw covariate units
    assignments: np.ndarray    # cluster id per input row
    centroids: np.ndarray = field(repr=False)  # raw covariate units

    @property
    def records(self):
        return list(self.data)


def _nearest(points, centroids):
    """Nearest centroid per point, ties going to the lowest centroid index."""
    K = centroids.shape[0]
    if K == 1:
        return np.zeros(points.shape[0], dtype=np.int64), np.sum((points - centroids[0]) ** 2, axis=1)
    tree = cKDTree(centroids)
    dist, idx = tree.query(points, k=2)
    # exact ties are resolved by index; kd-tree order is otherwise arbitrary
    tie = dist[:, 0] == dist[:, 1]
    best = np.where(tie, np.minimum(idx[:, 0], idx[:, 1]), idx[:, 0])
    d2 = np.sum((points - centroids[best]) ** 2, axis=1)
    return best.astype(np.int64), d2


def _kmeanspp(points, K, rng):
    n = points.shape[0]
    chosen = np.empty(K, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for k in range(1, K):
        total = d2.sum()
        if total > 0:
            r = rng.random() * total
            c = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            c = min(c, n - 1)
            while d2[c] == 0:  # guard against float edge at the cumsum end
                c -= 1
        else:
            c = int(np.flatnonzero(~taken)[0])
        chosen[k] = c
        taken[c] = True
        np.minimum(d2, np.sum((points - points[c]) ** 2, axis=1), out=d2)
    return points[chosen].copy()


def _repair_empty(points, assign, centroids, K):
    counts = np.bincount(assign, minlength=K)
    while np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        largest = int(np.argmax(counts))
        members = np.flatnonzero(assign == largest)
        d2 = np.sum((points[members] - centroids[largest]) ** 2, axis=1)
        far = int(members[int(np.argmax(d2))])
        assign[far] = empty
        centroids[empty] = points[far]
        counts[largest] -= 1
        counts[empty] += 1
    return assign


def kmeans(points, K: int, max_iter: int = 100, seed=None):
    """Lloyd's algorithm from k-means++ seeding.

    Returns ``(assignments, centroids)``.  Every cluster is non-empty: an
    empty cluster takes the point farthest from the centroid of the largest
    cluster.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if not 1 <= K <= n:
        raise InvalidArgumentError(f"need 1 <= K <= n, got K={K}, n={n}")
    if max_iter < 1:
        raise InvalidArgumentError("max_iter must be >= 1")
    if K == n:
        return np.arange(n, dtype=np.int64), points.copy()
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(points, K, rng)
    assign = None
    for _ in range(max_iter):
        new, _ = _nearest(points, centroids)
        new = _repair_empty(points, new, centroids, K)
        counts = np.bincount(new, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, new, points)
        centroids = sums / counts[:, None]
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
    return assign, centroids


def _standardize(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (X - mean) / std


def _cluster_maxima(y, assign, K):
    # argmax per cluster with ties to the lowest row index
    order = np.lexsort((np.arange(y.size), -y, assign))
    first = np.ones(order.size, dtype=bool)
    first[1:] = assign[order][1:] != assign[order][:-1]
    winners = order[first]
    return winners[np.argsort(assign[winners])]


def eps_max_sample(
    data: CausalDataset,
    m: int,
    seed=None,
    stratify_by_treatment: bool = False,
    max_iter: int = 100,
) -> MaxSampleResult:
    """Cluster covariates into ``K = n // m`` groups and keep each group's
    largest-outcome record.

    Clustering runs on per-dimension z-scored covariates and ignores the
    treatment unless ``stratify_by_treatment`` is set, in which case each
    arm is clustered separately with ``K_t = n_t // m``.
    """
    n = data.n
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"block size must satisfy 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    Z = _standardize(data.X)

    if stratify_by_treatment:
        assign = np.empty(n, dtype=np.int64)
        offset = 0
        for arm in (0, 1):
            rows = np.flatnonzero(data.t == arm)
            if rows.size == 0:
                continue
            K_arm = rows.size // m
            if K_arm == 0:
                raise InvalidArgumentError(f"arm t={arm} has {rows.size} < m={m} records")
            a, _ = kmeans(Z[rows], K_arm, max_iter=max_iter, seed=rng)
            assign[rows] = a + offset
            offset += K_arm
        K = offset
    else:
        K = n // m
        assign, _ = kmeans(Z, K, max_iter=max_iter, seed=rng)

    counts = np.bincount(assign, minlength=K)
    raw_centroids = np.zeros((K, data.d))
    np.add.at(raw_centroids, assign, data.X)
    raw_centroids /= counts[:, None]
    radius = float(np.sqrt(np.max(np.sum((data.X - raw_centroids[assign]) ** 2, axis=1))))

    winners = _cluster_maxima(data.y, assign, K)
    order = np.argsort(winners)
    idx = winners[order]
    return MaxSampleResult(
        data=data.subset(idx),
        indices=idx,
        cluster_count=K,
        block_size=m,
        max_intra_radius=radius,
        assignments=assign,
        centroids=raw_centroids,
    )


def block_maxima(values, block: int) -> np.ndarray:
    """Maxima of consecutive disjoint blocks; a trailing partial block is dropped."""
    v = np.asarray(values, dtype=float).ravel()
    if block < 1:
        raise InvalidArgumentError("block must be >= 1")
    if block > v.size:
        raise InvalidArgumentError(f"block={block} exceeds the number of values ({v.size})")
    k = v.size // block
    return v[: k * block].reshape(k, block).max(axis=1)
