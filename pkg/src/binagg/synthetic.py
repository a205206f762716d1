"""Synthetic binary-descriptor corpora drawn from class-specific BMMs.

Every class mixes a few patterns taken from a shared pool, so classes
overlap the way real images share visual words.  Bit probabilities of each
pattern follow Beta(shape, shape); shapes below 1 give the U-shaped
distribution of bits that are nearly fixed within a pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import PackedDescriptorSet
from .mixtures import BernoulliMixture, bmm_sample
from .retrieval import GroundTruth


@dataclass(frozen=True)
class Corpus:
    images: list
    labels: list

    def ground_truth(self, exclude_query: bool = True) -> dict:
        """Leave-one-out judgements: every other image of the same class is positive."""
        by_class: dict = {}
        for img, lab in zip(self.images, self.labels):
            by_class.setdefault(lab, []).append(img.image_id)
        return {
            img.image_id: GroundTruth(
                img.image_id,
                {i for i in by_class[lab] if i != img.image_id},
                exclude_query=exclude_query,
            )
            for img, lab in zip(self.images, self.labels)
        }


def class_models(
    rng: np.random.Generator,
    n_classes: int,
    dim: int,
    pool_size: int = 24,
    patterns_per_class: int = 4,
    shape: float = 0.5,
) -> list[BernoulliMixture]:
    pool = rng.beta(shape, shape, size=(pool_size, dim))
    models = []
    for _ in range(n_classes):
        pick = rng.choice(pool_size, size=patterns_per_class, replace=False)
        weights = rng.dirichlet(np.full(patterns_per_class, 2.0))
        models.append(BernoulliMixture(weights, pool[pick]))
    return models


def draw_corpus(
    rng: np.random.Generator,
    models,
    per_class: int,
    per_image: int,
    prefix: str = "",
) -> Corpus:
    images, labels = [], []
    for c, m in enumerate(models):
        for i in range(per_class):
            bits, _ = bmm_sample(m, per_image, rng)
            images.append(PackedDescriptorSet.from_bits(bits, f"{prefix}c{c:02d}_{i:03d}"))
            labels.append(c)
    return Corpus(images, labels)


def pooled_sample(corpus: Corpus, size: int, rng: np.random.Generator) -> PackedDescriptorSet:
    """Uniform sample of descriptors from every image of ``corpus``."""
    words = np.concatenate([img.words for img in corpus.images])
    if size < len(words):
        words = words[np.sort(rng.choice(len(words), size=size, replace=False))]
    return PackedDescriptorSet(corpus.images[0].dim_bits, words, "sample")


def cnn_like_vectors(rng: np.random.Generator, labels, dim: int = 32, spread: float = 0.6):
    """Unit vectors clustered by class, standing in for CNN image features."""
    centers = rng.normal(size=(max(labels) + 1, dim))
    out = centers[list(labels)] + spread * rng.normal(size=(len(labels), dim))
    return out / np.linalg.norm(out, axis=1, keepdims=True)
