"""Aggregate one image's local descriptors into a single global vector."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .clustering import Vocabulary, assign_many
from .descriptors import PackedDescriptorSet
from .mixtures import (
    BernoulliMixture,
    GaussianMixture,
    as_real_matrix,
    bmm_posteriors,
    gmm_posteriors,
)

KINDS = ("bow", "vlad", "fv-bmm", "fv-gmm", "cnn", "pca-reduced")

# posteriors below this are dropped from the accumulation
GAMMA_SKIP = 1e-9


class EmptyImageError(ValueError):
    """Raised when a Fisher vector is requested for an image with no descriptors."""


@dataclass(frozen=True, eq=False)
class GlobalVector:
    kind: str
    values: np.ndarray
    image_id: str = ""
    provenance: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown vector kind {self.kind!r}")
        v = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("global vector has non-finite components")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, GlobalVector):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.image_id == other.image_id
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def fingerprint(*parts) -> str:
    """Short stable hash of model arrays and encoder flags."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _model_fingerprint(model, *flags) -> str:
    if isinstance(model, Vocabulary):
        return fingerprint(model.method, model.centroids, *flags)
    if isinstance(model, GaussianMixture):
        return fingerprint("gmm", model.weights, model.means, model.variances, *flags)
    return fingerprint("bmm", model.weights, model.means, *flags)


def _check_dim(expected: int, img: PackedDescriptorSet):
    if img.dim_bits != expected:
        raise ValueError(f"image descriptors have {img.dim_bits} bits, model expects {expected}")


# -- BoW / VLAD -------------------------------------------------------------


def encode_bow(vocab: Vocabulary, img: PackedDescriptorSet) -> GlobalVector:
    """Raw visual-word count histogram (tf-idf is applied at retrieval time)."""
    _check_dim(vocab.dim, img)
    if img.count == 0:
        warnings.warn(f"image {img.image_id!r} has no descriptors", RuntimeWarning, stacklevel=2)
    words = assign_many(vocab, img)
    hist = np.bincount(words, minlength=vocab.k).astype(np.float64)
    return GlobalVector("bow", hist, img.image_id, _model_fingerprint(vocab))


def encode_vlad(vocab: Vocabulary, img: PackedDescriptorSet) -> GlobalVector:
    """Per-word sums of residuals ``x_t - mu_i``, concatenated (K*D values)."""
    _check_dim(vocab.dim, img)
    centroids = vocab.real_centroids()
    v = np.zeros_like(centroids)
    if img.count:
        words = assign_many(vocab, img)
        x = img.to_real()
        np.add.at(v, words, x)
        v -= np.bincount(words, minlength=vocab.k)[:, None] * centroids
    return GlobalVector("vlad", v.ravel(), img.image_id, _model_fingerprint(vocab))


# -- Fisher vectors ---------------------------------------------------------


def _sparse_gamma(gamma: np.ndarray) -> np.ndarray:
    return np.where(gamma < GAMMA_SKIP, 0.0, gamma)


def _prepare(m, img, posteriors):
    if isinstance(img, PackedDescriptorSet):
        _check_dim(m.dim, img)
        image_id = img.image_id
    else:
        image_id = ""
    x = as_real_matrix(img, m.dim)
    if x.shape[0] == 0:
        raise EmptyImageError(f"image {image_id!r} has no descriptors")
    return x, _sparse_gamma(posteriors(m, x)), image_id


def encode_fv_bmm(
    m: BernoulliMixture, img, include_weights: bool = False
) -> GlobalVector:
    """BMM Fisher vector, evaluated term by term over the descriptors.

    Layout is ``[G_alpha (K)] + G_mu (K*D, component-major)``; the weight
    block is only present when ``include_weights`` is set.
    """
    x, gamma, image_id = _prepare(m, img, bmm_posteriors)
    t = x.shape[0]
    sqrt_w = np.sqrt(m.weights)
    scale = np.sqrt(m.means * (1.0 - m.means))
    g_mu = np.empty_like(m.means)
    for k in range(m.k):
        g_mu[k] = gamma[:, k] @ ((x - m.means[k]) / scale[k])
    g_mu /= t * sqrt_w[:, None]
    parts = [g_mu.ravel()]
    if include_weights:
        g_alpha = (gamma - m.weights[None, :]).sum(axis=0) / (t * sqrt_w)
        parts.insert(0, g_alpha)
    return GlobalVector(
        "fv-bmm", np.concatenate(parts), image_id, _model_fingerprint(m, include_weights)
    )


def bmm_statistics(m: BernoulliMixture, img) -> tuple[np.ndarray, np.ndarray, int]:
    """Zero- and first-order occupancy statistics ``(S0 (K,), S1 (K, D), T)``."""
    x, gamma, _ = _prepare(m, img, bmm_posteriors)
    return gamma.sum(axis=0), gamma.T @ x, x.shape[0]


def encode_fv_bmm_stats(
    m: BernoulliMixture, img, include_weights: bool = False
) -> GlobalVector:
    """Same vector as :func:`encode_fv_bmm`, computed from S0/S1 in one pass."""
    s0, s1, t = bmm_statistics(m, img)
    w = m.weights[:, None]
    g_mu = (s1 - m.means * s0[:, None]) / (t * np.sqrt(w * m.means * (1.0 - m.means)))
    parts = [g_mu.ravel()]
    if include_weights:
        parts.insert(0, (s0 - t * m.weights) / (t * np.sqrt(m.weights)))
    image_id = img.image_id if isinstance(img, PackedDescriptorSet) else ""
    return GlobalVector(
        "fv-bmm", np.concatenate(parts), image_id, _model_fingerprint(m, include_weights)
    )


def encode_fv_gmm(
    m: GaussianMixture,
    img,
    include_weights: bool = False,
    include_variances: bool = False,
) -> GlobalVector:
    """Diagonal-GMM Fisher vector; layout ``[G_alpha] + G_mu + [G_sigma]``."""
    x, gamma, image_id = _prepare(m, img, gmm_posteriors)
    t = x.shape[0]
    sqrt_w = np.sqrt(m.weights)
    sigma = np.sqrt(m.variances)
    g_mu = np.empty_like(m.means)
    g_sigma = np.empty_like(m.means)
    for k in range(m.k):
        z = (x - m.means[k]) / sigma[k]
        g_mu[k] = gamma[:, k] @ z
        if include_variances:
            g_sigma[k] = gamma[:, k] @ (z * z - 1.0) / np.sqrt(2.0)
    norm = t * sqrt_w[:, None]
    parts = [(g_mu / norm).ravel()]
    if include_weights:
        parts.insert(0, (gamma - m.weights[None, :]).sum(axis=0) / (t * sqrt_w))
    if include_variances:
        parts.append((g_sigma / norm).ravel())
    fp = _model_fingerprint(m, include_weights, include_variances)
    return GlobalVector("fv-gmm", np.concatenate(parts), image_id, fp)


def encode_fv_gmm_stats(
    m: GaussianMixture,
    img,
    include_weights: bool = False,
    include_variances: bool = False,
) -> GlobalVector:
    """:func:`encode_fv_gmm` from the S0/S1/S2 occupancy statistics."""
    x, gamma, image_id = _prepare(m, img, gmm_posteriors)
    t = x.shape[0]
    s0 = gamma.sum(axis=0)
    s1 = gamma.T @ x
    sqrt_w = np.sqrt(m.weights)
    sigma = np.sqrt(m.variances)
    norm = t * sqrt_w[:, None]
    parts = [((s1 - m.means * s0[:, None]) / (sigma * norm)).ravel()]
    if include_weights:
        parts.insert(0, (s0 - t * m.weights) / (t * sqrt_w))
    if include_variances:
        s2 = gamma.T @ (x * x)
        centered = s2 - 2.0 * m.means * s1 + m.means**2 * s0[:, None]
        parts.append(((centered / m.variances - s0[:, None]) / (np.sqrt(2.0) * norm)).ravel())
    fp = _model_fingerprint(m, include_weights, include_variances)
    return GlobalVector("fv-gmm", np.concatenate(parts), image_id, fp)


def fv_dim(k: int, dim: int, include_weights: bool = False, include_variances: bool = False) -> int:
    """Length of a Fisher vector for the given layout flags."""
    return k * dim * (2 if include_variances else 1) + (k if include_weights else 0)
