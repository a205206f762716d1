import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binagg.clustering import Vocabulary
from binagg.descriptors import PackedDescriptorSet, pack_bits
from binagg.encoders import (
    GAMMA_SKIP,
    EmptyImageError,
    GlobalVector,
    encode_bow,
    encode_fv_bmm,
    encode_fv_bmm_stats,
    encode_fv_gmm,
    encode_fv_gmm_stats,
    encode_vlad,
    fv_dim,
)
from binagg.fisher import (
    alpha_fisher_kernel,
    bmm_pointwise_scores,
    bmm_scores,
    fim_alpha,
    fim_mu_diagonal,
    reduced_fim_alpha,
    reduced_fim_alpha_inverse,
)
from binagg.mixtures import BernoulliMixture, GaussianMixture
from conftest import random_bits, random_bmm, random_gmm


def img(bits, image_id="x"):
    return PackedDescriptorSet.from_bits(bits, image_id)


def test_bow_counts_assignments(rng):
    vocab = Vocabulary(8, pack_bits(np.eye(8, dtype=np.uint8)[:3]), "kmajority")
    bits = np.zeros((4, 8), np.uint8)
    bits[0, 0] = bits[1, 0] = bits[2, 1] = bits[3, 2] = 1
    v = encode_bow(vocab, img(bits))
    assert v.kind == "bow" and v.values.tolist() == [2.0, 1.0, 1.0]


def test_bow_empty_image_warns():
    vocab = Vocabulary(8, pack_bits(np.eye(8, dtype=np.uint8)[:3]), "kmajority")
    with pytest.warns(RuntimeWarning):
        v = encode_bow(vocab, PackedDescriptorSet.empty(8))
    assert not v.values.any()


@pytest.mark.parametrize("method", ["kmeans", "kmajority"])
def test_vlad_matches_loop(method, rng):
    dim = 20
    if method == "kmeans":
        vocab = Vocabulary(dim, rng.random((4, dim)), "kmeans")
    else:
        vocab = Vocabulary(dim, pack_bits(random_bits(rng, 4, dim)), "kmajority")
    bits = random_bits(rng, 30, dim)
    c = vocab.real_centroids()
    expected = np.zeros((4, dim))
    for row in bits.astype(float):
        j = np.argmin(((c - row) ** 2).sum(axis=1)) if method == "kmeans" else np.argmin(
            np.abs(c - row).sum(axis=1)
        )
        expected[j] += row - c[j]
    np.testing.assert_allclose(encode_vlad(vocab, img(bits)).values, expected.ravel(), atol=1e-12)


def fv_bmm_loop(m, x, include_weights):
    """Descriptor-by-descriptor evaluation of the normalized BMM gradient."""
    t = len(x)
    g_a = np.zeros(m.k)
    g_mu = np.zeros((m.k, m.dim))
    for row in x:
        lp = np.array(
            [np.log(m.weights[k]) + np.sum(np.log(np.where(row == 1, m.means[k], 1 - m.means[k])))
             for k in range(m.k)]
        )
        gamma = np.exp(lp - lp.max())
        gamma /= gamma.sum()
        gamma[gamma < GAMMA_SKIP] = 0.0
        for k in range(m.k):
            g_a[k] += gamma[k] - m.weights[k]
            g_mu[k] += gamma[k] * (row - m.means[k]) / np.sqrt(m.means[k] * (1 - m.means[k]))
    g_a /= t * np.sqrt(m.weights)
    g_mu /= t * np.sqrt(m.weights)[:, None]
    return np.concatenate(([g_a] if include_weights else []) + [g_mu.ravel()])


@settings(max_examples=25)
@given(st.integers(1, 5), st.integers(1, 20), st.integers(1, 15), st.booleans(), st.integers(0, 2**32 - 1))
def test_fv_bmm_matches_loop(k, dim, t, weights, seed):
    r = np.random.default_rng(seed)
    m = random_bmm(r, k, dim)
    x = random_bits(r, t, dim)
    got = encode_fv_bmm(m, img(x), weights).values
    np.testing.assert_allclose(got, fv_bmm_loop(m, x, weights), rtol=1e-9, atol=1e-12)
    assert got.size == fv_dim(k, dim, weights)


def test_fv_bmm_is_scaled_score(rng):
    m = random_bmm(rng, 3, 10)
    x = random_bits(rng, 12, 10)
    g_a, g_mu = bmm_scores(m, x)
    fv = encode_fv_bmm(m, x, include_weights=True).values
    t = 12
    np.testing.assert_allclose(fv[:3], g_a / (t * np.sqrt(m.weights)), rtol=1e-10)
    np.testing.assert_allclose(
        fv[3:], (g_mu * np.sqrt(m.means * (1 - m.means) / m.weights[:, None]) / t).ravel(), rtol=1e-10
    )
    pa, pm = bmm_pointwise_scores(m, x)
    np.testing.assert_allclose(pa.sum(axis=0), g_a, atol=1e-12)
    np.testing.assert_allclose(pm.sum(axis=0), g_mu, atol=1e-10)


def fv_gmm_loop(m, x, weights, variances):
    t = len(x)
    g_a, g_mu, g_s = np.zeros(m.k), np.zeros((m.k, m.dim)), np.zeros((m.k, m.dim))
    sig = np.sqrt(m.variances)
    for row in x:
        lp = np.array([
            np.log(m.weights[k]) - 0.5 * np.sum(np.log(2 * np.pi * m.variances[k]))
            - 0.5 * np.sum((row - m.means[k]) ** 2 / m.variances[k])
            for k in range(m.k)
        ])
        gamma = np.exp(lp - lp.max())
        gamma /= gamma.sum()
        gamma[gamma < GAMMA_SKIP] = 0.0
        for k in range(m.k):
            z = (row - m.means[k]) / sig[k]
            g_a[k] += gamma[k] - m.weights[k]
            g_mu[k] += gamma[k] * z
            g_s[k] += gamma[k] * (z**2 - 1) / np.sqrt(2)
    n = t * np.sqrt(m.weights)
    parts = ([g_a / n] if weights else []) + [(g_mu / n[:, None]).ravel()]
    if variances:
        parts.append((g_s / n[:, None]).ravel())
    return np.concatenate(parts)


@settings(max_examples=25)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(1, 12), st.booleans(), st.booleans(),
       st.integers(0, 2**32 - 1))
def test_fv_gmm_matches_loop(k, dim, t, weights, variances, seed):
    r = np.random.default_rng(seed)
    m = random_gmm(r, k, dim)
    x = r.normal(0, 1, (t, dim))
    got = encode_fv_gmm(m, x, weights, variances).values
    np.testing.assert_allclose(got, fv_gmm_loop(m, x, weights, variances), rtol=1e-8, atol=1e-10)
    stats = encode_fv_gmm_stats(m, x, weights, variances).values
    np.testing.assert_allclose(stats, got, rtol=1e-9, atol=1e-12)
    assert got.size == fv_dim(k, dim, weights, variances)


def test_fv_on_empty_image_raises(rng):
    m = random_bmm(rng, 2, 8)
    with pytest.raises(EmptyImageError):
        encode_fv_bmm(m, PackedDescriptorSet.empty(8))
    with pytest.raises(EmptyImageError):
        encode_fv_bmm_stats(m, PackedDescriptorSet.empty(8))


def test_fv_dim_mismatch_raises(rng):
    m = random_bmm(rng, 2, 8)
    with pytest.raises(ValueError):
        encode_fv_bmm(m, img(random_bits(rng, 3, 9)))


def test_tiny_posteriors_are_skipped():
    # the second component explains the data with posterior far below the skip threshold
    m = BernoulliMixture([0.5, 0.5], [[0.999] * 20, [0.001] * 20])
    x = np.ones((3, 20), np.uint8)
    fv = encode_fv_bmm(m, x).values
    assert np.all(fv[20:] == 0.0)


def test_fim_blocks():
    w = np.array([0.2, 0.3, 0.5])
    f = fim_alpha(w)
    np.testing.assert_allclose(f.sum(axis=1), 0.0, atol=1e-15)
    red = reduced_fim_alpha(w)
    np.testing.assert_allclose(red @ reduced_fim_alpha_inverse(w), np.eye(2), atol=1e-12)
    m = BernoulliMixture(w, np.full((3, 2), 0.5))
    np.testing.assert_allclose(fim_mu_diagonal(m), np.repeat(w[:, None] / 0.25, 2, axis=1))
    assert alpha_fisher_kernel([1, 2, 3], [1, 1, 1], w) == pytest.approx(1 / 0.2 + 2 / 0.3 + 3 / 0.5)


def test_global_vector_validation():
    with pytest.raises(ValueError):
        GlobalVector("sift", [1.0])
    with pytest.raises(ValueError):
        GlobalVector("cnn", [np.nan])
    v = GlobalVector("cnn", [1.0, 2.0], "a")
    assert v.dim == 2 and v == GlobalVector("cnn", [1.0, 2.0], "a")
    with pytest.raises(ValueError):
        v.values[0] = 3.0


def test_provenance_tracks_model_and_flags(rng):
    m = random_bmm(rng, 2, 8)
    x = random_bits(rng, 4, 8)
    assert encode_fv_bmm(m, x).provenance == encode_fv_bmm(m, x).provenance
    assert encode_fv_bmm(m, x).provenance != encode_fv_bmm(m, x, True).provenance
    assert encode_fv_bmm(m, x).provenance != encode_fv_bmm(random_bmm(rng, 2, 8), x).provenance
