import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binagg.descriptors import (
    PackedDescriptorSet,
    cosine,
    euclidean,
    hamming,
    hamming_matrix,
    hamming_nearest,
    hamming_two_nearest,
    n_words,
    pack_bits,
    padding_mask,
    unpack_bits,
)
from conftest import bits_to_int, random_bits

bit_rows = st.integers(1, 200).flatmap(
    lambda d: st.lists(st.lists(st.integers(0, 1), min_size=d, max_size=d), min_size=1, max_size=8)
)


@given(bit_rows)
def test_pack_roundtrip_and_layout(rows):
    bits = np.array(rows, dtype=np.uint8)
    words = pack_bits(bits)
    assert words.shape == (len(rows), n_words(bits.shape[1]))
    assert np.array_equal(unpack_bits(words, bits.shape[1]), bits)
    for row, w in zip(bits, words):
        as_int = sum(int(x) << (64 * i) for i, x in enumerate(w))
        assert as_int == bits_to_int(row)


@given(bit_rows)
def test_padding_is_zero(rows):
    bits = np.array(rows, dtype=np.uint8)
    assert not (pack_bits(bits) & padding_mask(bits.shape[1])).any()


def test_nonzero_padding_rejected():
    words = np.zeros((1, 1), np.uint64)
    words[0, 0] = np.uint64(1) << np.uint64(40)
    with pytest.raises(ValueError, match="padding"):
        PackedDescriptorSet(32, words)


def test_set_is_read_only_and_comparable(rng):
    bits = random_bits(rng, 5, 70)
    s = PackedDescriptorSet.from_bits(bits, "a")
    with pytest.raises(ValueError):
        s.words[0, 0] = 1
    assert s == PackedDescriptorSet.from_bits(bits, "a")
    assert s != PackedDescriptorSet.from_bits(bits, "b")
    assert s.count == 5 and len(PackedDescriptorSet.empty(70)) == 0
    assert np.array_equal(s.to_real(), bits.astype(float))


@settings(max_examples=50)
@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_hamming_matches_python_popcount(dim, seed):
    r = np.random.default_rng(seed)
    a, b = random_bits(r, 4, dim), random_bits(r, 6, dim)
    pa, pb = pack_bits(a), pack_bits(b)
    expected = np.array(
        [[bin(bits_to_int(x) ^ bits_to_int(y)).count("1") for y in b] for x in a]
    )
    assert np.array_equal(hamming_matrix(pa, pb), expected)
    assert hamming(pa[0], pb[0]) == expected[0, 0]


@settings(max_examples=50)
@given(st.integers(1, 130), st.integers(0, 2**32 - 1))
def test_hamming_metric_axioms(dim, seed):
    r = np.random.default_rng(seed)
    x, y, z = pack_bits(random_bits(r, 3, dim))
    assert hamming(x, x) == 0
    assert hamming(x, y) == hamming(y, x)
    assert hamming(x, z) <= hamming(x, y) + hamming(y, z)
    assert 0 <= hamming(x, y) <= dim


def test_nearest_ties_go_to_lowest_index():
    a = pack_bits(np.array([[0, 0, 0, 0]]))
    b = pack_bits(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [1, 1, 1, 1]]))
    idx, dist = hamming_nearest(a, b)
    assert idx[0] == 0 and dist[0] == 1


def test_two_nearest_against_sorted_matrix(rng):
    a, b = pack_bits(random_bits(rng, 30, 256)), pack_bits(random_bits(rng, 40, 256))
    d1, d2 = hamming_two_nearest(a, b)
    s = np.sort(hamming_matrix(a, b), axis=1)
    assert np.array_equal(d1, s[:, 0]) and np.array_equal(d2, s[:, 1])


def test_two_nearest_with_single_candidate():
    a = pack_bits(np.array([[1, 0]]))
    d1, d2 = hamming_two_nearest(a, pack_bits(np.array([[0, 0]])))
    assert d1[0] == 1 and d2[0] == -1


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        hamming_matrix(np.zeros((1, 1), np.uint64), np.zeros((1, 2), np.uint64))


def test_real_distances():
    assert euclidean([0, 0], [3, 4]) == 5.0
    assert cosine([1, 0], [1, 0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])
