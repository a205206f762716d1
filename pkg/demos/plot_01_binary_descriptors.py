"""
Packing binary descriptors and measuring Hamming distance
=========================================================

Binary local descriptors (ORB, LATCH, AKAZE) are bit strings.  We keep them
packed in 64-bit words so distances reduce to XOR plus popcount.
"""

import time

import numpy as np

from binagg import PackedDescriptorSet, hamming, hamming_matrix
from binagg.descriptors import hamming_nearest, hamming_two_nearest

rng = np.random.default_rng(0)

# 256-bit descriptors take four words each; bit d lives in word d // 64
bits = (rng.random((1000, 256)) < 0.5).astype(np.uint8)
image = PackedDescriptorSet.from_bits(bits, "img0")
print(image.words.shape, image.words.dtype)

# packing round-trips exactly
assert np.array_equal(image.bits(), bits)

# distance between two descriptors, and between two whole sets
print("d(x0, x1) =", hamming(image.words[0], image.words[1]))
other = PackedDescriptorSet.from_bits(rng.random((1500, 256)) < 0.5)
d = hamming_matrix(image.words, other.words)
print("pairwise distances:", d.shape, "mean", d.mean().round(2))  # about 128 for random bits

# nearest neighbours; ties resolve to the lower index
idx, dist = hamming_nearest(image.words, other.words)
d1, d2 = hamming_two_nearest(image.words, other.words)
assert np.array_equal(dist, d1)

# the kernel is compiled on first use, so time a second call
start = time.perf_counter()
hamming_matrix(image.words, other.words)
elapsed = time.perf_counter() - start
print(f"{image.count * other.count / elapsed:.2e} descriptor pairs per second")
