import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binagg.encoders import GlobalVector
from binagg.errors import NumericDegeneracyError
from binagg.postproc import PcaModel, l2_normalize, pca_apply, pca_train, power_law, standard_pipeline

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(arrays(np.float64, st.integers(1, 50), elements=finite), st.floats(0.05, 1.0))
def test_power_law_properties(v, beta):
    out = power_law(v, beta)
    assert np.array_equal(np.sign(out), np.sign(v))
    np.testing.assert_allclose(np.abs(out), np.abs(v) ** beta, rtol=1e-12)
    assert np.array_equal(power_law(v, 1.0), v)


@pytest.mark.parametrize("beta", [0.0, -0.5, 1.5])
def test_power_law_rejects_beta(beta):
    with pytest.raises(ValueError):
        power_law([1.0], beta)


@given(arrays(np.float64, st.integers(1, 50), elements=finite))
def test_l2_normalize(v):
    if not np.any(v):
        with pytest.raises(NumericDegeneracyError):
            l2_normalize(v)
        return
    out = l2_normalize(v)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def svd_oracle(x, m):
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    return vt[:m], s[:m] ** 2 / (len(x) - 1)


def aligned(a, b):
    """Row-wise sign alignment of b to a."""
    return b * np.sign(np.sum(a * b, axis=1))[:, None]


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_pca_matches_svd(seed, d):
    r = np.random.default_rng(seed)
    x = r.normal(size=(40, d)) * np.linspace(3.0, 0.5, d)
    m = max(1, d // 2)
    p = pca_train(x, m)
    comp, var = svd_oracle(x, m)
    np.testing.assert_allclose(p.explained_variance, var, rtol=1e-8)
    np.testing.assert_allclose(p.components, aligned(p.components, comp), atol=1e-6)
    np.testing.assert_allclose(p.components @ p.components.T, np.eye(m), atol=1e-10)
    idx = np.argmax(np.abs(p.components), axis=1)
    assert np.all(p.components[np.arange(m), idx] > 0)
    assert np.all(np.diff(p.explained_variance) <= 1e-12)


def test_randomized_pca_above_dense_limit(rng):
    n, d, rank = 120, 5000, 6
    basis = np.linalg.qr(rng.normal(size=(d, rank)))[0].T
    x = (rng.normal(size=(n, rank)) * [50, 40, 30, 20, 10, 5]) @ basis + 0.01 * rng.normal(size=(n, d))
    p = pca_train(x, 4, seed=3)
    comp, var = svd_oracle(x, 4)
    np.testing.assert_allclose(p.explained_variance, var, rtol=1e-6)
    np.testing.assert_allclose(p.components, aligned(p.components, comp), atol=1e-6)
    assert pca_train(x, 4, seed=3) == p


def test_pca_apply_and_validation(rng):
    x = rng.normal(size=(30, 5))
    p = pca_train(x, 2)
    np.testing.assert_allclose(pca_apply(p, x), (x - x.mean(axis=0)) @ p.components.T)
    assert p.input_dim == 5 and p.output_dim == 2
    with pytest.raises(ValueError):
        pca_apply(p, np.zeros(4))
    with pytest.raises(ValueError):
        pca_train(x[:2], 2)
    with pytest.raises(ValueError):
        pca_train(x, 6)
    with pytest.raises(ValueError):
        PcaModel(np.zeros(2), [[1.0, 1.0]], [1.0])


def test_pca_accepts_global_vectors(rng):
    x = rng.normal(size=(10, 4))
    vs = [GlobalVector("cnn", row) for row in x]
    assert pca_train(vs, 2) == pca_train(x, 2)


def test_standard_pipeline_order(rng):
    raw = GlobalVector("fv-bmm", rng.normal(size=8), "a")
    out = standard_pipeline(raw)
    np.testing.assert_allclose(out.values, l2_normalize(power_law(raw.values)))
    assert out.kind == "fv-bmm" and out.image_id == "a"
    p = pca_train(rng.normal(size=(20, 8)), 3)
    red = standard_pipeline(raw, p)
    assert red.kind == "pca-reduced" and red.dim == 3
    np.testing.assert_allclose(red.values, l2_normalize(pca_apply(p, out.values)))
    no_renorm = standard_pipeline(raw, p, renorm=False)
    np.testing.assert_allclose(no_renorm.values, pca_apply(p, out.values))
    first = standard_pipeline(raw, p, pca_first=True)
    np.testing.assert_allclose(first.values, l2_normalize(power_law(pca_apply(p, raw.values))))


def test_standard_pipeline_zero_vector(rng):
    with pytest.warns(RuntimeWarning):
        out = standard_pipeline(GlobalVector("fv-bmm", np.zeros(6), "z"))
    assert not out.values.any()
