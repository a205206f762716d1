"""Bit-packed binary descriptors and the distance kernels built on them.

Descriptors of ``dim_bits`` bits are stored as rows of little-endian 64-bit
words.  Bit ``d`` lives in word ``d // 64`` at position ``d % 64``; unused
bits of the last word are always zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

WORD_BITS = 64


def n_words(dim_bits: int) -> int:
    return (dim_bits + WORD_BITS - 1) // WORD_BITS


def pack_bits(bits) -> np.ndarray:
    """Pack a ``(T, D)`` array of 0/1 values into ``(T, ceil(D/64))`` uint64 words."""
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[None, :]
    if bits.ndim != 2:
        raise ValueError(f"expected a 2-d bit array, got shape {bits.shape}")
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError("bit array must contain only 0 and 1")
    t, d = bits.shape
    w = n_words(d)
    padded = np.zeros((t, w * WORD_BITS), dtype=np.uint8)
    padded[:, :d] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64).reshape(t, w)


def unpack_bits(words: np.ndarray, dim_bits: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns a ``(T, D)`` uint8 array."""
    words = np.ascontiguousarray(np.asarray(words, dtype="<u8"))
    if words.ndim == 1:
        words = words[None, :]
    as_bytes = words.view(np.uint8).reshape(words.shape[0], 8 * words.shape[1])
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :dim_bits]


def padding_mask(dim_bits: int) -> np.ndarray:
    """Per-word mask of the bits that must be zero (the padding)."""
    w = n_words(dim_bits)
    mask = np.zeros(w, dtype=np.uint64)
    used = dim_bits - (w - 1) * WORD_BITS
    if used < WORD_BITS:
        mask[-1] = ~np.uint64((1 << used) - 1)
    return mask


@dataclass(frozen=True, eq=False)
class PackedDescriptorSet:
    """The binary local descriptors of one image.

    ``words`` has shape ``(count, n_words(dim_bits))``.  The array is made
    read-only on construction so a set can be shared freely.
    """

    dim_bits: int
    words: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        if self.dim_bits <= 0:
            raise ValueError("dim_bits must be positive")
        words = np.asarray(self.words, dtype=np.uint64)
        if words.ndim == 1 and words.size == 0:
            words = words.reshape(0, n_words(self.dim_bits))
        if words.ndim != 2 or words.shape[1] != n_words(self.dim_bits):
            raise ValueError(
                f"words must have shape (T, {n_words(self.dim_bits)}), got {words.shape}"
            )
        if words.size and (words & padding_mask(self.dim_bits)).any():
            raise ValueError("padding bits must be zero")
        words = np.ascontiguousarray(words)
        words.flags.writeable = False
        object.__setattr__(self, "words", words)

    @classmethod
    def from_bits(cls, bits, image_id: str = "") -> PackedDescriptorSet:
        bits = np.asarray(bits)
        if bits.ndim == 1:
            bits = bits[None, :]
        return cls(bits.shape[1], pack_bits(bits), image_id)

    @classmethod
    def empty(cls, dim_bits: int, image_id: str = "") -> PackedDescriptorSet:
        return cls(dim_bits, np.zeros((0, n_words(dim_bits)), np.uint64), image_id)

    @property
    def count(self) -> int:
        return self.words.shape[0]

    def __len__(self) -> int:
        return self.count

    def bits(self) -> np.ndarray:
        return unpack_bits(self.words, self.dim_bits)

    def to_real(self) -> np.ndarray:
        """Descriptors as a ``(T, D)`` float64 matrix of 0.0/1.0."""
        return self.bits().astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, PackedDescriptorSet):
            return NotImplemented
        return (
            self.dim_bits == other.dim_bits
            and self.image_id == other.image_id
            and np.array_equal(self.words, other.words)
        )

    __hash__ = None


def unpack_to_real(words, dim_bits: int) -> np.ndarray:
    """Unpack one descriptor (1-d words) or many (2-d) to float 0/1 values."""
    words = np.asarray(words, dtype=np.uint64)
    out = unpack_bits(words, dim_bits).astype(np.float64)
    return out[0] if words.ndim == 1 else out


# -- popcount kernels -------------------------------------------------------

@intrinsic
def _popcount64(typingctx, x):
    """Native population count (LLVM ctpop, a single instruction on x86-64)."""
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@njit(cache=True)
def _hamming_matrix(a, b, out):
    n, w = a.shape
    m = b.shape[0]
    row = np.empty(w, np.uint64)
    for i in range(n):
        row[:] = a[i]
        for j in range(m):
            s = np.uint64(0)
            for k in range(w):
                s += _popcount64(row[k] ^ b[j, k])
            out[i, j] = s


@njit(cache=True)
def _hamming_nearest(a, b, idx, dist):
    n, w = a.shape
    m = b.shape[0]
    row = np.empty(w, np.uint64)
    for i in range(n):
        row[:] = a[i]
        best = np.int64(1) << 62
        arg = -1
        for j in range(m):
            s = np.int64(0)
            for k in range(w):
                s += np.int64(_popcount64(row[k] ^ b[j, k]))
            if s < best:
                best = s
                arg = j
        idx[i] = arg
        dist[i] = best


@njit(cache=True)
def _hamming_two_nearest(a, b, d1, d2):
    n, w = a.shape
    m = b.shape[0]
    big = np.int64(1) << 62
    row = np.empty(w, np.uint64)
    for i in range(n):
        row[:] = a[i]
        first = big
        second = big
        for j in range(m):
            s = np.int64(0)
            for k in range(w):
                s += np.int64(_popcount64(row[k] ^ b[j, k]))
            # most candidates lose to both, so test the weaker bound first
            if s < second:
                if s < first:
                    second = first
                    first = s
                else:
                    second = s
        d1[i] = first
        d2[i] = second


def _as_words(x) -> np.ndarray:
    if isinstance(x, PackedDescriptorSet):
        return x.words
    x = np.asarray(x, dtype=np.uint64)
    return x[None, :] if x.ndim == 1 else x


def _check_width(a: np.ndarray, b: np.ndarray):
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"descriptor width mismatch: {a.shape[1]} vs {b.shape[1]} words")


def hamming(a, b) -> int:
    """Hamming distance between two packed descriptors (1-d word arrays)."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError(f"descriptor shape mismatch: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


def hamming_matrix(a, b) -> np.ndarray:
    """All-pairs Hamming distances, shape ``(len(a), len(b))``, int32."""
    a, b = _as_words(a), _as_words(b)
    _check_width(a, b)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int32)
    _hamming_matrix(np.ascontiguousarray(a), np.ascontiguousarray(b), out)
    return out


def hamming_nearest(a, b) -> tuple[np.ndarray, np.ndarray]:
    """For each row of ``a`` the index and distance of its nearest row in ``b``.

    Ties go to the lowest index.
    """
    a, b = _as_words(a), _as_words(b)
    _check_width(a, b)
    if b.shape[0] == 0:
        raise ValueError("cannot search an empty descriptor set")
    idx = np.empty(a.shape[0], dtype=np.int64)
    dist = np.empty(a.shape[0], dtype=np.int64)
    _hamming_nearest(np.ascontiguousarray(a), np.ascontiguousarray(b), idx, dist)
    return idx, dist


def hamming_two_nearest(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and second smallest distance from each row of ``a`` into ``b``.

    Missing neighbours (``len(b) < 2``) are reported as -1.
    """
    a, b = _as_words(a), _as_words(b)
    _check_width(a, b)
    d1 = np.empty(a.shape[0], dtype=np.int64)
    d2 = np.empty(a.shape[0], dtype=np.int64)
    _hamming_two_nearest(np.ascontiguousarray(a), np.ascontiguousarray(b), d1, d2)
    big = np.int64(1) << 62
    d1[d1 == big] = -1
    d2[d2 == big] = -1
    return d1, d2


# -- real-valued vectors ----------------------------------------------------


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def euclidean(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.linalg.norm(a - b))


def cosine(a, b) -> float:
    a, b = _pair(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))
