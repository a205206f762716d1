"""
Retrieval, PCA and fusing with CNN features
===========================================

Evaluates aggregated vectors by leave-one-out mean average precision, shows
PCA compression, the ratio-test direct matcher, and a convex combination of
Fisher-vector and CNN distances.
"""

import numpy as np

from binagg import (
    bmm_fit_em,
    encode_fv_bmm,
    evaluate_run,
    mean_average_precision,
    pca_train,
    standard_pipeline,
    synthetic,
)

rng = np.random.default_rng(3)
models = synthetic.class_models(rng, 10, 64)
corpus = synthetic.draw_corpus(rng, models, per_class=10, per_image=50)
train = synthetic.draw_corpus(rng, models, per_class=5, per_image=50, prefix="t")
gt = corpus.ground_truth()

bmm = bmm_fit_em(synthetic.pooled_sample(train, 5000, rng), 8, seed=0)
fvs = [standard_pipeline(encode_fv_bmm(bmm, im)) for im in corpus.images]
vecs = {v.image_id: v.values for v in fvs}
print(f"BMM-FV mAP {mean_average_precision(evaluate_run(vecs, vecs), gt):.3f}")

# PCA is trained on post-processed vectors; output is re-normalized
train_fvs = [standard_pipeline(encode_fv_bmm(bmm, im)) for im in train.images]
pca = pca_train(train_fvs, 32, seed=0)
red = {im.image_id: standard_pipeline(encode_fv_bmm(bmm, im), pca).values for im in corpus.images}
print(f"PCA-32 mAP {mean_average_precision(evaluate_run(red, red), gt):.3f}")

# direct matching compares descriptor sets pairwise, so use a smaller corpus;
# a descriptor counts when its nearest neighbour passes the 0.8 ratio test
small = synthetic.draw_corpus(rng, models[:3], per_class=8, per_image=50)
sets = {im.image_id: im for im in small.images}
run = evaluate_run(sets, sets, "direct", ratio=0.8)
print(f"direct matching mAP (24 images) {mean_average_precision(run, small.ground_truth()):.3f}")

# fusion: alpha weights the CNN distance; both sides must be unit-norm
cnn = synthetic.cnn_like_vectors(rng, corpus.labels, spread=1.2)
cnn = {im.image_id: c for im, c in zip(corpus.images, cnn)}
for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
    pairs = {i: (cnn[i], vecs[i]) for i in vecs}
    run = evaluate_run(pairs, pairs, "fused", alpha=alpha)
    print(f"alpha={alpha:.2f} mAP {mean_average_precision(run, gt):.3f}")
