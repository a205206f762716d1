"""Visual vocabularies: k-means on binary-as-real vectors, k-majority, k-medoids."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .descriptors import (
    PackedDescriptorSet,
    hamming_matrix,
    hamming_nearest,
    n_words,
    pack_bits,
    unpack_bits,
)

log = logging.getLogger(__name__)

REAL = "real"
BINARY = "binary"
METHODS = ("kmeans", "kmajority", "kmedoids")


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """K visual words.

    ``centroids`` is a ``(K, D)`` float64 array for ``kind == "real"`` and a
    ``(K, n_words(D))`` uint64 array of packed bits for ``kind == "binary"``.
    ``objective`` holds the clustering cost recorded after every assignment
    step; it is informational and is not serialized.
    """

    dim: int
    centroids: np.ndarray
    method: str
    objective: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown learning method {self.method!r}")
        dtype = np.float64 if self.method == "kmeans" else np.uint64
        c = np.ascontiguousarray(np.asarray(self.centroids, dtype=dtype))
        width = self.dim if self.kind == REAL else n_words(self.dim)
        if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] != width:
            raise ValueError(f"centroids must have shape (K, {width}), got {c.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def kind(self) -> str:
        return REAL if self.method == "kmeans" else BINARY

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def real_centroids(self) -> np.ndarray:
        """Centroids as float vectors; binary words are unpacked to 0/1."""
        if self.kind == REAL:
            return self.centroids
        return unpack_bits(self.centroids, self.dim).astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.method == other.method
            and np.array_equal(self.centroids, other.centroids)
        )

    __hash__ = None


def _words_of(sample) -> tuple[np.ndarray, int]:
    if isinstance(sample, PackedDescriptorSet):
        return sample.words, sample.dim_bits
    raise TypeError("binary clustering expects a PackedDescriptorSet sample")


def _check_k(n: int, k: int):
    if k <= 0:
        raise ValueError("k must be positive")
    if n < k:
        raise ValueError(f"sample of {n} descriptors is smaller than k={k}")


# -- k-means ----------------------------------------------------------------


def squared_distances(x: np.ndarray, c: np.ndarray, chunk: int = 4096) -> np.ndarray:
    c_sq = np.einsum("ij,ij->i", c, c)
    out = np.empty((x.shape[0], c.shape[0]))
    for s in range(0, x.shape[0], chunk):
        xs = x[s : s + chunk]
        d = np.einsum("ij,ij->i", xs, xs)[:, None] - 2.0 * xs @ c.T + c_sq[None, :]
        np.maximum(d, 0.0, out=d)
        out[s : s + chunk] = d
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            i = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen centroid
            free = np.setdiff1d(np.arange(n), chosen)
            i = int(rng.choice(free))
        chosen.append(i)
        np.minimum(closest, ((x - x[i]) ** 2).sum(axis=1), out=closest)
    return x[chosen].copy()


def kmeans(sample, k: int, max_iters: int = 100, seed: int = 0) -> Vocabulary:
    """Lloyd's k-means with k-means++ seeding.

    ``sample`` is a ``(N, D)`` real matrix or a :class:`PackedDescriptorSet`,
    which is unpacked to 0/1 reals.
    """
    if isinstance(sample, PackedDescriptorSet):
        x = sample.to_real()
    else:
        x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("sample must be a 2-d array")
    n, dim = x.shape
    _check_k(n, k)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    assign = None
    history = []
    for _ in range(max_iters):
        d = squared_distances(x, centroids)
        new_assign = np.argmin(d, axis=1)
        point_cost = d[np.arange(n), new_assign]
        empty = np.setdiff1d(np.arange(k), new_assign)
        for j in empty:
            # reseed the empty cluster on the worst-served point
            far = int(np.argmax(point_cost))
            centroids[j] = x[far]
            new_assign[far] = j
            point_cost[far] = -1.0
        history.append(float(((x - centroids[new_assign]) ** 2).sum()))
        if assign is not None and len(empty) == 0 and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
    return Vocabulary(dim, centroids, "kmeans", tuple(history))


# -- k-majority -------------------------------------------------------------


def _cluster_bit_counts(bits: np.ndarray, assign: np.ndarray, k: int):
    order = np.argsort(assign, kind="stable")
    sizes = np.bincount(assign, minlength=k)
    ones = np.zeros((k, bits.shape[1]), dtype=np.int64)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    nonempty = sizes > 0
    if nonempty.any():
        sums = np.add.reduceat(bits[order].astype(np.int64), starts[nonempty], axis=0)
        ones[nonempty] = sums
    return ones, sizes


def _repair_empty(words, centers, assign, dist, k):
    empty = np.setdiff1d(np.arange(k), assign)
    dist = dist.copy()
    for j in empty:
        far = int(np.argmax(dist))
        centers[j] = words[far]
        assign[far] = j
        dist[far] = -1
    return len(empty)


def kmajority(sample, k: int, max_iters: int = 100, seed: int = 0) -> Vocabulary:
    """Hamming assignment followed by per-bit majority vote.

    A bit is set when strictly more than half of the cluster has it set.
    """
    words, dim = _words_of(sample)
    n = words.shape[0]
    _check_k(n, k)
    rng = np.random.default_rng(seed)
    centers = words[np.sort(rng.choice(n, size=k, replace=False))].copy()
    bits = unpack_bits(words, dim)
    assign = None
    history = []
    for _ in range(max_iters):
        new_assign, dist = hamming_nearest(words, centers)
        repaired = _repair_empty(words, centers, new_assign, dist, k)
        if repaired:
            new_assign, dist = hamming_nearest(words, centers)
        history.append(int(dist.sum()))
        if assign is not None and not repaired and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        ones, sizes = _cluster_bit_counts(bits, assign, k)
        majority = (2 * ones > sizes[:, None]).astype(np.uint8)
        filled = sizes > 0
        centers[filled] = pack_bits(majority[filled])
    return Vocabulary(dim, centers, "kmajority", tuple(history))


# -- k-medoids --------------------------------------------------------------


def _cluster_medoid(words: np.ndarray, members: np.ndarray) -> int:
    d = hamming_matrix(words[members], words[members]).sum(axis=1, dtype=np.int64)
    return int(members[np.argmin(d)])


def _swap_pass(dmat: np.ndarray, medoids: np.ndarray) -> tuple[np.ndarray, int] | None:
    """Best single medoid/non-medoid exchange, or None if nothing improves."""
    n = dmat.shape[0]
    dm = dmat[:, medoids]
    order = np.argsort(dm, axis=1, kind="stable")
    near = order[:, 0]
    d_near = dm[np.arange(n), near]
    d_second = dm[np.arange(n), order[:, 1]] if len(medoids) > 1 else np.full(n, np.iinfo(np.int64).max)
    current = int(d_near.sum())
    best_cost, best = current, None
    is_medoid = np.zeros(n, dtype=bool)
    is_medoid[medoids] = True
    candidates = np.flatnonzero(~is_medoid)
    if len(candidates) == 0:
        return None
    dc = dmat[:, candidates].astype(np.int64)
    for i in range(len(medoids)):
        keep = np.where(near == i, d_second, d_near)
        costs = np.minimum(dc, keep[:, None]).sum(axis=0)
        j = int(np.argmin(costs))
        if costs[j] < best_cost:
            best_cost, best = int(costs[j]), (i, int(candidates[j]))
    if best is None:
        return None
    out = medoids.copy()
    out[best[0]] = best[1]
    return out, best_cost


def kmedoids(
    sample, k: int, max_iters: int = 100, seed: int = 0, swap_limit: int = 2000
) -> Vocabulary:
    """Alternating k-medoids under Hamming distance.

    Medoids are members of the sample.  When the sample has at most
    ``swap_limit`` descriptors the alternating phase is followed by PAM-style
    swaps until no single exchange lowers the cost.
    """
    words, dim = _words_of(sample)
    n = words.shape[0]
    _check_k(n, k)
    rng = np.random.default_rng(seed)
    medoids = np.sort(rng.choice(n, size=k, replace=False))
    assign = None
    history = []
    for _ in range(max_iters):
        new_assign, dist = hamming_nearest(words, words[medoids])
        empty = np.setdiff1d(np.arange(k), new_assign)
        for j in empty:
            far = int(np.argmax(dist))
            medoids[j] = far
            dist[far] = -1
        if len(empty):
            new_assign, dist = hamming_nearest(words, words[medoids])
        history.append(int(dist.sum()))
        if assign is not None and len(empty) == 0 and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        updated = medoids.copy()
        for j in range(k):
            members = np.flatnonzero(assign == j)
            if len(members):
                updated[j] = _cluster_medoid(words, members)
        if np.array_equal(updated, medoids):
            break
        medoids = updated
    if n <= swap_limit:
        dmat = hamming_matrix(words, words).astype(np.int64)
        while True:
            step = _swap_pass(dmat, medoids)
            if step is None:
                break
            medoids, cost = step
            history.append(cost)
    return Vocabulary(dim, words[medoids].copy(), "kmedoids", tuple(history))


def train_vocabulary(method: str, sample, k: int, max_iters: int = 100, seed: int = 0):
    if method == "kmeans":
        return kmeans(sample, k, max_iters, seed)
    if method == "kmajority":
        return kmajority(sample, k, max_iters, seed)
    if method == "kmedoids":
        return kmedoids(sample, k, max_iters, seed)
    raise ValueError(f"unknown learning method {method!r}")


# -- assignment -------------------------------------------------------------


def assign_many(vocab: Vocabulary, descriptors) -> np.ndarray:
    """Nearest visual word for every descriptor; ties go to the lowest index.

    ``descriptors`` is a :class:`PackedDescriptorSet` or a packed word array.
    Binary vocabularies compare by Hamming distance, real ones by Euclidean
    distance on the unpacked descriptors.
    """
    if isinstance(descriptors, PackedDescriptorSet):
        if descriptors.dim_bits != vocab.dim:
            raise ValueError(f"descriptor dim {descriptors.dim_bits} != vocabulary dim {vocab.dim}")
        words = descriptors.words
    else:
        words = np.asarray(descriptors, dtype=np.uint64)
        if words.ndim == 1:
            words = words[None, :]
        if words.shape[1] != n_words(vocab.dim):
            raise ValueError("descriptor width does not match the vocabulary")
    if words.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if vocab.kind == BINARY:
        idx, _ = hamming_nearest(words, vocab.centroids)
        return idx
    x = unpack_bits(words, vocab.dim).astype(np.float64)
    return np.argmin(squared_distances(x, vocab.centroids), axis=1)


def assign(vocab: Vocabulary, descriptor) -> int:
    """Index of the visual word nearest to a single packed descriptor."""
    return int(assign_many(vocab, np.asarray(descriptor, dtype=np.uint64)[None, :])[0])
