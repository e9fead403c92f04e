"""Group reviews into opinion clusters and lay them out as a ranked memory bank.

Clustering is a hard, non-differentiable step: it runs on detached numpy
copies of the salience-weighted sentence vectors, and only decides the
order in which word vectors enter the memory.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
import torch


def weight_by_salience(pooled, scores):
    """Scale each sentence vector by its salience score."""
    return pooled * scores[:, None]


def choose_k(n_reviews: int) -> int:
    if n_reviews < 1:
        raise ValueError("need at least one review")
    return math.ceil(n_reviews / 20) if n_reviews <= 200 else 20


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:  # only duplicates left
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _sq_distances(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def inertia(points, assignments, centers) -> float:
    return float(((points - centers[assignments]) ** 2).sum())


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int):
    n = len(points)
    centers = _kmeans_pp_init(points, k, rng)
    assignments = np.full(n, -1)
    for _ in range(max_iter):
        new = _sq_distances(points, centers).argmin(axis=1)
        for empty in range(k):
            if (new == empty).any():
                continue
            sizes = np.bincount(new, minlength=k)
            donor = int(sizes.argmax())
            members = np.flatnonzero(new == donor)
            if len(members) < 2:
                continue
            far = members[((points[members] - centers[donor]) ** 2).sum(axis=1).argmax()]
            new[far] = empty
        if np.array_equal(new, assignments):
            break
        assignments = new
        for c in range(k):
            members = assignments == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
    return assignments, centers


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100,
           n_init: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with seeded k-means++ initialisation.

    Stops when assignments no longer change or after ``max_iter`` rounds.
    An emptied cluster takes the point of the largest cluster that lies
    farthest from its center. With ``n_init > 1`` the restarts draw from one
    seeded generator and the lowest-inertia run wins (the earliest on ties).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if n_init < 1:
        raise ValueError("n_init must be positive")
    rng = np.random.default_rng(seed)
    best, best_inertia = None, np.inf
    for _ in range(n_init):
        assignments, centers = _lloyd(points, k, rng, max_iter)
        value = inertia(points, assignments, centers)
        if value < best_inertia:
            best, best_inertia = (assignments, centers), value
    return best


@dataclass
class OpinionCluster:
    members: list[int]  # review indices, nearest to the center first
    center: np.ndarray
    distances: list[float]  # aligned with ``members``
    rank: int = 0
    word_count: int = 0

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def total_distance(self) -> float:
        return float(sum(self.distances))


def rank_within_cluster(members, distances) -> tuple[list[int], list[float]]:
    order = sorted(zip(distances, members), key=lambda pair: (pair[0], pair[1]))
    return [m for _, m in order], [float(d) for d, _ in order]


def rank_clusters(clusters: list[OpinionCluster]) -> list[OpinionCluster]:
    """Largest cluster first; ties go to the tighter cluster, then the lowest member index."""
    ordered = sorted(clusters, key=lambda c: (-c.size, c.total_distance, min(c.members)))
    for rank, cluster in enumerate(ordered, start=1):
        cluster.rank = rank
    return ordered


def cluster_reviews(vectors, k: int, seed: int = 0, max_iter: int = 100,
                    n_init: int = 1) -> list[OpinionCluster]:
    points = np.asarray(vectors, dtype=np.float64)
    assignments, centers = kmeans(points, k, seed, max_iter, n_init)
    clusters = []
    for c in range(k):
        members = np.flatnonzero(assignments == c).tolist()
        if not members:
            continue
        dists = np.sqrt(((points[members] - centers[c]) ** 2).sum(axis=1)).tolist()
        members, dists = rank_within_cluster(members, dists)
        clusters.append(OpinionCluster(members, centers[c], dists))
    return rank_clusters(clusters)


def single_cluster(n_reviews: int) -> list[OpinionCluster]:
    """All reviews in input order as one rank-1 pseudo-cluster."""
    return [OpinionCluster(list(range(n_reviews)), np.zeros(0), [0.0] * n_reviews, rank=1)]


@dataclass
class RankedMemory:
    vectors: torch.Tensor  # (L_mem, d)
    offsets: list[int]  # cluster k occupies [offsets[k-1], offsets[k])
    cluster_ranks: torch.Tensor  # (L_mem,), 1-based
    review_order: list[int]
    token_ids: torch.Tensor | None = None  # (L_mem,) surface ids for copying
    clusters: list[OpinionCluster] = field(default_factory=list)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_clusters(self) -> int:
        return len(self.offsets) - 1

    @property
    def boundaries(self) -> list[int]:
        return self.offsets[1:-1]

    def rank_of_slot(self, slot: int) -> int:
        if not 0 <= slot < len(self):
            raise IndexError(slot)
        return bisect.bisect_right(self.offsets, slot)


def flatten_memory(clusters: list[OpinionCluster], words: torch.Tensor, lengths,
                   token_ids: torch.Tensor | None = None) -> RankedMemory:
    """Concatenate word vectors by (cluster rank, within-cluster rank, position)."""
    lengths = [int(n) for n in lengths]
    pieces, id_pieces, ranks = [], [], []
    offsets, order = [0], []
    for cluster in clusters:
        count = 0
        for review in cluster.members:
            n = lengths[review]
            pieces.append(words[review, :n])
            if token_ids is not None:
                id_pieces.append(token_ids[review, :n])
            order.append(review)
            count += n
        cluster.word_count = count
        ranks.append(torch.full((count,), cluster.rank, dtype=torch.long))
        offsets.append(offsets[-1] + count)
    return RankedMemory(
        vectors=torch.cat(pieces, dim=0),
        offsets=offsets,
        cluster_ranks=torch.cat(ranks),
        review_order=order,
        token_ids=torch.cat(id_pieces) if token_ids is not None else None,
        clusters=clusters,
    )
