"""Class prototype constructions: mean, PCN, and k-means centroids fed to the PCN.

All constructions take the support embeddings as one ``[n_support x D]``
tensor plus integer labels.  Within a class, instances are concatenated in
ascending sample-index order, so the PCN sees a fixed layout; it is *not*
invariant to reordering the support set, whereas the mean is.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError
from .models import PcnParams, pcn_forward

EXHAUSTIVE_SEEDS = 256


@dataclass
class PrototypeSet:
    vectors: Tensor
    provenance: str

    @property
    def n(self) -> int:
        return self.vectors.shape[0]


def _class_index(labels, n_way: int) -> list[np.ndarray]:
    labels = np.asarray(labels)
    groups = [np.flatnonzero(labels == c) for c in range(n_way)]
    for c, g in enumerate(groups):
        if g.size == 0:
            raise ValueError(f"class {c} has no support embeddings")
    return groups


def mean_prototypes(embeddings, labels, n_way: int) -> PrototypeSet:
    emb = ad.constant(embeddings)
    groups = _class_index(labels, n_way)
    avg = np.zeros((n_way, emb.shape[0]))
    for c, g in enumerate(groups):
        avg[c, g] = 1.0 / g.size
    return PrototypeSet(ad.matmul(Tensor(avg), emb), "mean")


def pcn_prototypes(embeddings, labels, n_way: int, pcn: PcnParams) -> PrototypeSet:
    emb = ad.constant(embeddings)
    groups = _class_index(labels, n_way)
    for c, g in enumerate(groups):
        if g.size != pcn.k_in:
            raise DimensionError(
                f"class {c} has {g.size} support embeddings but the PCN takes k_in={pcn.k_in}; "
                "enable clustering to reduce higher-shot supports")
    order = np.concatenate(groups)
    stacked = ad.reshape(ad.take_rows(emb, order), (n_way, pcn.k_in * emb.shape[1]))
    return PrototypeSet(pcn_forward(stacked, pcn), "pcn")


def cluster_pcn_prototypes(embeddings, labels, n_way: int, pcn: PcnParams,
                           rng: np.random.Generator) -> PrototypeSet:
    """Cluster each class into ``pcn.k_in`` centroids, then apply the PCN.

    Assignments are computed on the current embedding values; centroids are
    averages of embeddings, so gradients still reach every support instance.
    """
    emb = ad.constant(embeddings)
    groups = _class_index(labels, n_way)
    k = pcn.k_in
    reduce = np.zeros((n_way * k, emb.shape[0]))
    for c, g in enumerate(groups):
        weights = centroid_weights(emb.data[g], k, rng)
        reduce[c * k:(c + 1) * k][:, g] = weights
    centroids = ad.matmul(Tensor(reduce), emb)
    stacked = ad.reshape(centroids, (n_way, k * emb.shape[1]))
    return PrototypeSet(pcn_forward(stacked, pcn), "cluster_pcn")


def compute_prototypes(embeddings, labels, n_way: int, *, use_pcn: bool,
                       pcn: PcnParams | None = None, clustering: bool = True,
                       rng: np.random.Generator | None = None) -> PrototypeSet:
    """Dispatch to the mean, PCN or cluster+PCN construction."""
    if not use_pcn:
        return mean_prototypes(embeddings, labels, n_way)
    counts = np.bincount(np.asarray(labels), minlength=n_way)
    if clustering and counts.min() > pcn.k_in:
        if rng is None:
            rng = np.random.default_rng(0)
        return cluster_pcn_prototypes(embeddings, labels, n_way, pcn, rng)
    return pcn_prototypes(embeddings, labels, n_way, pcn)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _sq_dists(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ikd,ikd->ik", diff, diff)


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = next(i for i in range(n) if i not in chosen)
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(points, points[[idx]])[:, 0])
    return points[chosen].copy()


def _repair_empty(points, labels, centroids, k):
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        own = np.einsum("id,id->i", points - centroids[labels], points - centroids[labels])
        movable = counts[labels] > 1
        own = np.where(movable, own, -np.inf)
        i = int(np.argmax(own))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] += 1
        centroids[j] = points[i]
    return labels


def _means(points, labels, k):
    return np.stack([points[labels == j].mean(axis=0) for j in range(k)])


def _sse(points, labels, centroids):
    diff = points - centroids[labels]
    return float(np.einsum("id,id->", diff, diff))


def _lloyd(points, k, centroids, max_iter):
    centroids = centroids.copy()
    labels = None
    history = []
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(points, centroids), axis=1)
        new = _repair_empty(points, new, centroids, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = _means(points, labels, k)
        history.append(_sse(points, labels, centroids))
    return centroids, labels, history


def kmeans(points, n_clusters: int, rng: np.random.Generator, max_iter: int = 50,
           n_init: int = 10):
    """Lloyd's algorithm from k-means++ seeds; keeps the best of ``n_init`` runs.

    Returns ``(centroids, labels, sse_history)`` where the history of the
    winning run is non-increasing.  Empty clusters are reseeded with the
    point farthest from its centroid among clusters that can spare one.
    Small inputs (at most ``EXHAUSTIVE_SEEDS`` subsets) also start Lloyd from
    every ``n_clusters``-subset of the points, since a handful of k-means++
    restarts can still settle in a poor local optimum there.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"cannot form {n_clusters} clusters from {n} points")
    starts = [_kmeans_pp(points, n_clusters, rng) for _ in range(n_init)]
    if math.comb(n, n_clusters) <= EXHAUSTIVE_SEEDS:
        starts += [points[list(idx)] for idx in itertools.combinations(range(n), n_clusters)]
    best = None
    for start in starts:
        run = _lloyd(points, n_clusters, start, max_iter)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    return best


def _canonical(centroids, labels):
    order = np.lexsort(centroids.T[::-1])
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return centroids[order], remap[labels]


def centroid_weights(points, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """Matrix ``W [n_clusters x K]`` such that ``W @ points`` are the sorted centroids."""
    centroids, labels, _ = kmeans(points, n_clusters, rng)
    _, labels = _canonical(centroids, labels)
    weights = np.zeros((n_clusters, len(points)))
    for j in range(n_clusters):
        members = labels == j
        weights[j, members] = 1.0 / members.sum()
    return weights


def cluster_reduce(points, n_clusters: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """K support embeddings of one class -> ``n_clusters`` centroids in lexicographic order."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < n_clusters:
        raise ValueError(
            f"cannot reduce {points.shape[0]} embeddings to {n_clusters} clusters (need K >= K')")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    centroids, labels, _ = kmeans(points, n_clusters, rng)
    return _canonical(centroids, labels)[0]
