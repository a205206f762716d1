"""
Fisher vectors from a Bernoulli mixture
=======================================

A Bernoulli mixture is the natural generative model for bit vectors.  The
Fisher vector of an image is the gradient of its log-likelihood, whitened by
a diagonal approximation of the Fisher information.
"""

import numpy as np

from binagg import bmm_fit_em, encode_fv_bmm, encode_fv_bmm_stats, gmm_fit_em, encode_fv_gmm
from binagg import standard_pipeline, synthetic
from binagg.fisher import bmm_pointwise_scores, fim_mu_diagonal
from binagg.mixtures import bmm_sample

rng = np.random.default_rng(2)
models = synthetic.class_models(rng, 8, 64)
train = synthetic.draw_corpus(rng, models, per_class=10, per_image=50)
sample = synthetic.pooled_sample(train, 4000, rng)

# EM starts from uniform weights and means in (0.25, 0.75) and stops once the
# mean matrix moves by less than eps
bmm = bmm_fit_em(sample, 8, seed=0, eps=0.05)
h = np.array(bmm.loglik_history)
print(f"EM: {len(h) - 1} iterations, log-likelihood {h[0]:.0f} -> {h[-1]:.0f}")
assert np.all(np.diff(h) >= 0)

# encoding one image; the weight block is optional
image = train.images[0]
fv = encode_fv_bmm(bmm, image)
fv_w = encode_fv_bmm(bmm, image, include_weights=True)
print("FV dims:", fv.dim, "(K*D)", fv_w.dim, "(K*(D+1))")

# the same vector from zero- and first-order occupancy statistics
fast = encode_fv_bmm_stats(bmm, image)
print("stats form max difference:", np.abs(fast.values - fv.values).max())

# the whitening uses E[score^2] ~ w / (mu (1 - mu)); check it by sampling
draws, _ = bmm_sample(bmm, 20000, rng)
_, g_mu = bmm_pointwise_scores(bmm, draws)
ratio = (g_mu**2).mean(axis=0) / fim_mu_diagonal(bmm)
print(f"Monte-Carlo / closed-form information: median {np.median(ratio):.2f}")

# the Gaussian alternative treats bits as reals
gmm = gmm_fit_em(sample.to_real(), 8, seed=0)
fv_g = encode_fv_gmm(gmm, image.to_real(), include_variances=True)
print("GMM FV dim with variance block:", fv_g.dim)

# both go through power-law and L2 normalization before retrieval
final = standard_pipeline(fv)
print("norm after post-processing:", np.linalg.norm(final.values).round(6))
