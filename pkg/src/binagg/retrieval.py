"""Similarity functions, ranking, direct matching, and AP/mAP evaluation."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .descriptors import PackedDescriptorSet, hamming_two_nearest
from .errors import NumericDegeneracyError
from .parallel import pmap

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class GroundTruth:
    """Relevance judgements for one query."""

    query_id: str
    positives: frozenset = field(default_factory=frozenset)
    junk: frozenset = field(default_factory=frozenset)
    exclude_query: bool = False

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(self.positives))
        object.__setattr__(self, "junk", frozenset(self.junk))
        if self.positives & self.junk:
            raise ValueError(f"query {self.query_id!r}: an image is both positive and junk")
        if self.query_id in self.positives:
            raise ValueError(f"query {self.query_id!r} lists itself as a positive")


@dataclass
class RetrievalRun:
    """Ranked result lists keyed by query id.

    Each list holds ``(image_id, score)`` pairs ordered best first; scores are
    distances when ``descending`` is False and similarities otherwise.
    """

    rankings: dict = field(default_factory=dict)
    descending: bool = False


# -- scoring ----------------------------------------------------------------


def tfidf_weights(corpus) -> np.ndarray:
    """``idf_k = ln(N / n_k)``; words that never occur get weight 0."""
    h = np.asarray([getattr(c, "values", c) for c in corpus], dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("tf-idf needs a non-empty corpus of histograms")
    n_docs = (h > 0).sum(axis=0)
    idf = np.zeros(h.shape[1])
    seen = n_docs > 0
    idf[seen] = np.log(h.shape[0] / n_docs[seen])
    return idf


def bow_similarities(query, database, idf) -> np.ndarray:
    """Cosine between tf-idf weighted histograms of ``query`` and each row of ``database``."""
    q = np.asarray(query, dtype=np.float64) * idf
    db = np.atleast_2d(np.asarray(database, dtype=np.float64)) * idf
    qn = np.linalg.norm(q)
    dn = np.linalg.norm(db, axis=1)
    out = np.zeros(db.shape[0])
    if qn == 0:
        return out
    ok = dn > 0
    out[ok] = (db[ok] @ q) / (dn[ok] * qn)
    return out


def bow_similarity(q, d, idf) -> float:
    return float(bow_similarities(q, d, idf)[0])


def _check_unit(name, v):
    n = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise NumericDegeneracyError(
            f"{name} is not L2-normalized (norm {np.max(np.abs(n - 1.0)) + 1:.6g}); "
            "normalize the vectors or rescale the distances before combining them"
        )


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def fused_distance(c1, f1, c2, f2, alpha: float) -> float:
    """``alpha * |c1 - c2| + (1 - alpha) * |f1 - f2|`` on unit-norm inputs."""
    _check_alpha(alpha)
    vs = [np.asarray(v, dtype=np.float64) for v in (c1, f1, c2, f2)]
    for name, v in zip(("c1", "f1", "c2", "f2"), vs):
        _check_unit(name, v)
    c1, f1, c2, f2 = vs
    return float(alpha * np.linalg.norm(c1 - c2) + (1.0 - alpha) * np.linalg.norm(f1 - f2))


def euclidean_distances(query, database) -> np.ndarray:
    db = np.atleast_2d(np.asarray(database, dtype=np.float64))
    return np.linalg.norm(db - np.asarray(query, dtype=np.float64), axis=1)


def fused_distances(cq, c_db, fq, f_db, alpha: float, rescale: tuple | None = None):
    """Vectorized fused distance from one query pair to every database pair.

    ``rescale`` is a pair of divisors applied to the two distances before the
    convex combination; when it is None all inputs must be unit-norm.
    """
    _check_alpha(alpha)
    dc = euclidean_distances(cq, c_db)
    df = euclidean_distances(fq, f_db)
    if rescale is None:
        for name, v in (("query CNN", cq), ("database CNN", c_db), ("query FV", fq), ("database FV", f_db)):
            _check_unit(name, np.asarray(v, dtype=np.float64))
    else:
        dc = dc / rescale[0]
        df = df / rescale[1]
    return alpha * dc + (1.0 - alpha) * df


def direct_match_similarity(
    query: PackedDescriptorSet, database: PackedDescriptorSet, ratio: float = 0.8
) -> float:
    """Fraction of query descriptors passing the nearest/second-nearest ratio test.

    A database image with fewer than two descriptors yields 0.  A pair of
    neighbours both at distance 0 counts as a match.
    """
    if query.count == 0:
        raise ValueError(f"query image {query.image_id!r} has no descriptors")
    if query.dim_bits != database.dim_bits:
        raise ValueError("query and database descriptors differ in length")
    if database.count < 2:
        return 0.0
    d1, d2 = hamming_two_nearest(query.words, database.words)
    matched = np.where(d2 > 0, d1 <= ratio * d2, True)
    return float(matched.sum()) / query.count


# -- ranking ----------------------------------------------------------------


def rank_scores(ids: Sequence[str], scores, descending: bool = False) -> list:
    """Sort ``(id, score)`` best first; ties broken by id."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(ids) != scores.size:
        raise ValueError("ids and scores differ in length")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in ranking")
    sign = -1.0 if descending else 1.0
    order = sorted(range(len(ids)), key=lambda i: (sign * scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order]


def _scorer(database: Mapping, metric: str, options: dict):
    """Return ``(ids, score_fn, descending)`` with the database stacked once."""
    ids = list(database)
    if metric == "euclidean":
        mat = np.stack([np.asarray(database[i], dtype=np.float64) for i in ids])
        return ids, lambda q: euclidean_distances(q, mat), False
    if metric == "tfidf":
        mat = np.stack([np.asarray(database[i], dtype=np.float64) for i in ids])
        idf = options["idf"]
        return ids, lambda q: bow_similarities(q, mat, idf), True
    if metric == "fused":
        alpha = options["alpha"]
        rescale = options.get("rescale")
        c_db = np.stack([np.asarray(database[i][0], dtype=np.float64) for i in ids])
        f_db = np.stack([np.asarray(database[i][1], dtype=np.float64) for i in ids])
        return ids, lambda q: fused_distances(q[0], c_db, q[1], f_db, alpha, rescale), False
    if metric == "direct":
        ratio = options.get("ratio", 0.8)
        sets = [database[i] for i in ids]
        return ids, lambda q: [direct_match_similarity(q, d, ratio) for d in sets], True
    raise ValueError(f"unknown metric {metric!r}")


def rank(query, database: Mapping, metric: str = "euclidean", **options) -> list:
    """Rank every database entry against ``query``.

    ``metric`` is ``euclidean`` (vectors), ``tfidf`` (BoW histograms, needs
    ``idf``), ``fused`` (``(cnn, fv)`` pairs, needs ``alpha``, optional
    ``rescale``) or ``direct`` (descriptor sets, optional ``ratio``).
    """
    ids, score, descending = _scorer(database, metric, options)
    return rank_scores(ids, score(query), descending)


# -- evaluation -------------------------------------------------------------


def average_precision(ranked, gt: GroundTruth) -> float:
    """Average precision of one ranked list.

    ``ranked`` holds image ids or ``(id, score)`` pairs, best first.  Junk
    images (and the query itself when ``gt.exclude_query`` is set) are removed
    before computing precision; positives missing from the list count as not
    retrieved.  The sum is accumulated exactly and rounded once, so e.g.
    hits at ranks 1 and 3 give exactly ``5/6``.
    """
    if not gt.positives:
        raise ValueError(f"query {gt.query_id!r} has no positives")
    hits = 0
    total = Fraction(0)
    position = 0
    for item in ranked:
        image_id = item[0] if isinstance(item, tuple) else item
        if image_id in gt.junk or (gt.exclude_query and image_id == gt.query_id):
            continue
        position += 1
        if image_id in gt.positives:
            hits += 1
            total += Fraction(hits, position)
    return float(total / len(gt.positives))


def mean_average_precision(run, gt: Mapping) -> float:
    """Unweighted mean of per-query AP over the queries in ``gt``."""
    return float(np.mean(list(per_query_ap(run, gt).values())))


def per_query_ap(run, gt: Mapping) -> dict:
    rankings = run.rankings if isinstance(run, RetrievalRun) else run
    if not gt:
        raise ValueError("ground truth is empty")
    missing = [q for q in gt if q not in rankings]
    if missing:
        raise ValueError(f"no ranking for queries {missing[:5]}")
    return {q: average_precision(rankings[q], g) for q, g in gt.items()}


def evaluate_run(queries: Mapping, database: Mapping, metric: str = "euclidean", **options):
    """Rank every query against the database (in parallel) into a RetrievalRun."""
    ids, score, descending = _scorer(database, metric, options)
    qids = list(queries)
    lists = pmap(lambda q: rank_scores(ids, score(queries[q]), descending), qids)
    return RetrievalRun(dict(zip(qids, lists)), descending=descending)
