"""
Visual vocabularies for binary features: BoW and VLAD
=====================================================

Three ways to learn K visual words from binary descriptors, and the two
encoders built on them.
"""

import numpy as np

from binagg import encode_bow, encode_vlad, evaluate_run, mean_average_precision, train_vocabulary
from binagg import synthetic
from binagg.retrieval import tfidf_weights

rng = np.random.default_rng(1)

# a small labelled corpus: 6 classes, 8 images each, 60 descriptors of 64 bits
models = synthetic.class_models(rng, 6, 64)
corpus = synthetic.draw_corpus(rng, models, per_class=8, per_image=60)
train = synthetic.draw_corpus(rng, models, per_class=4, per_image=60, prefix="t")
sample = synthetic.pooled_sample(train, 1500, rng)

# k-majority keeps centroids binary (a bit is set when most members set it);
# k-medoids picks actual descriptors; k-means works on the bits as reals
vocabs = {m: train_vocabulary(m, sample, 32, seed=0) for m in ("kmajority", "kmedoids", "kmeans")}
for method, v in vocabs.items():
    print(f"{method:10s} kind={v.kind:6s} final cost={v.objective[-1]:.1f}")

gt = corpus.ground_truth()

# BoW: word counts, compared by tf-idf weighted cosine
for method, v in vocabs.items():
    hists = {im.image_id: encode_bow(v, im).values for im in corpus.images}
    idf = tfidf_weights(list(hists.values()))
    run = evaluate_run(hists, hists, "tfidf", idf=idf)
    print(f"BoW  + {method:10s} mAP {mean_average_precision(run, gt):.3f}")

# VLAD: per-word residual sums; K * D values per image
for method, v in vocabs.items():
    vecs = {}
    for im in corpus.images:
        raw = encode_vlad(v, im).values
        vecs[im.image_id] = np.sign(raw) * np.sqrt(np.abs(raw))
        vecs[im.image_id] /= np.linalg.norm(vecs[im.image_id])
    run = evaluate_run(vecs, vecs)
    print(f"VLAD + {method:10s} mAP {mean_average_precision(run, gt):.3f}  dim {raw.size}")
