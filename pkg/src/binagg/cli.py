"""Command-line front end: train, encode, post-process, evaluate.

Exit codes: 0 success, 2 usage or incompatible inputs, 3 parse error,
4 numeric degeneracy.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import io as _io
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io, synthetic
from .clustering import Vocabulary, train_vocabulary
from .config import PipelineConfig
from .descriptors import PackedDescriptorSet
from .encoders import (
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
from .errors import NumericDegeneracyError, ParseError
from .mixtures import BernoulliMixture, GaussianMixture, bmm_fit_em, bmm_sample, gmm_fit_em
from .parallel import pmap
from .postproc import PcaModel, l2_normalize, pca_train, standard_pipeline
from .retrieval import evaluate_run, per_query_ap, tfidf_weights

log = logging.getLogger("binagg")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _pooled_sample(path, sample_size, seed) -> PackedDescriptorSet:
    images = io.read_descriptors(path)
    dim = images[0].dim_bits if images else 0
    words = np.concatenate([img.words for img in images]) if images else np.zeros((0, 1), np.uint64)
    if sample_size is not None and sample_size < len(words):
        rng = np.random.default_rng(seed)
        words = words[np.sort(rng.choice(len(words), size=sample_size, replace=False))]
    return PackedDescriptorSet(dim, words, "sample")


# -- commands ---------------------------------------------------------------


def cmd_train(args):
    learning = "em" if args.what in ("bmm", "gmm") else args.method
    method = {"bmm": "fv-bmm", "gmm": "fv-gmm"}.get(args.what, "bow")
    PipelineConfig(method, learning, k=args.k, seed=args.seed, paths={"sample": args.sample}).check_paths()
    sample = _pooled_sample(args.sample, args.sample_size, args.seed)
    if args.what == "vocab":
        model = train_vocabulary(args.method, sample, args.k, args.max_iters, args.seed)
    elif args.what == "bmm":
        model = bmm_fit_em(sample, args.k, args.seed, args.eps, args.max_iters)
    else:
        model = gmm_fit_em(sample.to_real(), args.k, args.seed, args.eps, args.max_iters)
    io.write_model(args.output, model)
    log.info("wrote %s", args.output)


def _encoder(args, model):
    if args.method in ("bow", "vlad"):
        if not isinstance(model, Vocabulary):
            raise UsageError(f"--method {args.method} needs a VOC1 vocabulary")
        PipelineConfig(args.method, model.method)
        return encode_bow if args.method == "bow" else encode_vlad
    PipelineConfig(args.method, "em")
    if args.method == "fv-bmm":
        if not isinstance(model, BernoulliMixture):
            raise UsageError("--method fv-bmm needs a BMM1 model")
        fn = encode_fv_bmm_stats if args.stats_form else encode_fv_bmm
        return lambda m, img: fn(m, img, args.include_weights)
    if not isinstance(model, GaussianMixture):
        raise UsageError("--method fv-gmm needs a GMM1 model")
    fn = encode_fv_gmm_stats if args.stats_form else encode_fv_gmm
    return lambda m, img: fn(m, img, args.include_weights, args.include_variances)


def cmd_encode(args):
    model = io.read_model(args.model)
    encode = _encoder(args, model)
    images = io.read_descriptors(args.input)

    def one(img):
        try:
            return encode(model, img)
        except EmptyImageError:
            warnings.warn(f"image {img.image_id!r} has no descriptors; writing a zero vector")
            dim = fv_dim(model.k, model.dim, args.include_weights,
                         args.include_variances and args.method == "fv-gmm")
            return GlobalVector(args.method, np.zeros(dim), img.image_id)

    io.write_vectors(args.output, pmap(one, images))


def cmd_postproc(args):
    pca = io.read_model(args.pca) if args.pca else None
    if pca is not None and not isinstance(pca, PcaModel):
        raise UsageError("--pca needs a PCA1 file")
    vectors = io.read_vectors(args.input)
    out = pmap(
        lambda v: standard_pipeline(v, pca, args.beta, args.renorm, args.pca_first), vectors
    )
    io.write_vectors(args.output, out)


def cmd_pca(args):
    sample = io.read_vectors(args.sample)
    io.write_model(args.output, pca_train(sample, args.dim, args.seed))


def _load_side(path) -> dict:
    out = {}
    for v in io.read_vectors(path):
        values = v.values
        if v.kind == "cnn":
            values = l2_normalize(values)
        out[v.image_id] = (v.kind, values)
    return out


def _paired(left: dict, right: dict, what: str) -> list:
    if set(left) != set(right):
        diff = sorted(set(left) ^ set(right))[:5]
        raise UsageError(f"{what}: ids do not pair up (e.g. {diff})")
    return list(left)


def _rescale_divisors(c_db, c_q, f_db, f_q):
    def max_dist(a, b):
        a = np.stack(list(a))
        b = np.stack(list(b))
        sq = (a**2).sum(1)[:, None] - 2 * a @ b.T + (b**2).sum(1)[None, :]
        m = float(np.sqrt(np.maximum(sq, 0).max()))
        if m == 0:
            raise NumericDegeneracyError("all distances are zero; cannot rescale")
        return m

    return max_dist(c_q, c_db), max_dist(f_q, f_db)


def cmd_fuse(args):
    left, right = _load_side(args.left), _load_side(args.right)
    ids = _paired(left, right, "fuse")
    c = {i: left[i][1] for i in ids}
    f = {i: right[i][1] for i in ids}
    rescale = _rescale_divisors(c.values(), c.values(), f.values(), f.values()) if args.rescale else None
    from .retrieval import fused_distances

    c_mat = np.stack([c[i] for i in ids])
    f_mat = np.stack([f[i] for i in ids])
    rows = pmap(lambda i: fused_distances(c[i], c_mat, f[i], f_mat, args.alpha, rescale), ids)
    lines = ["id\t" + "\t".join(ids)]
    lines += [i + "\t" + "\t".join(f"{d:.9g}" for d in row) for i, row in zip(ids, rows)]
    text = "\n".join(lines) + "\n"
    if args.output:
        io.atomic_write(args.output, text.encode())
    else:
        sys.stdout.write(text)


def _report(args, aps: dict, run):
    lines = [f"{'query':<24}{'AP':>12}"]
    lines += [f"{q:<24}{ap:>12.6f}" for q, ap in aps.items()]
    m = float(np.mean(list(aps.values())))
    lines.append(f"{'mAP':<24}{m:>12.6f}")
    if args.kv:
        lines += [f"ap[{q}]={ap:.9f}" for q, ap in aps.items()]
        lines.append(f"map={m:.9f}")
    sys.stdout.write("\n".join(lines) + "\n")
    if args.ranking:
        out = []
        for q, ranked in run.rankings.items():
            out += [f"{q}\t{r}\t{i}\t{s:.9g}" for r, (i, s) in enumerate(ranked, 1)]
        io.atomic_write(args.ranking, ("\n".join(out) + "\n").encode())


def _ground_truth(args):
    gt = io.read_ground_truth(args.gt)
    if args.exclude_query:
        from dataclasses import replace

        gt = {q: replace(g, exclude_query=True) for q, g in gt.items()}
    return gt


def cmd_evaluate(args):
    gt = _ground_truth(args)
    db, queries = _load_side(args.db), _load_side(args.queries)
    missing = [q for q in gt if q not in queries]
    if missing:
        raise UsageError(f"no query vector for {missing[:5]}")
    kinds = {k for k, _ in db.values()} | {k for k, _ in queries.values()}
    if args.fuse:
        try:
            c_db_path, c_q_path = args.fuse.split(",")
        except ValueError:
            raise UsageError("--fuse expects CNN_DB,CNN_QUERIES") from None
        if "bow" in kinds:
            raise UsageError("BoW histograms cannot be fused by Euclidean distance")
        c_db, c_q = _load_side(c_db_path), _load_side(c_q_path)
        ids = _paired(c_db, db, "--fuse database")
        rescale = None
        if args.rescale:
            rescale = _rescale_divisors(
                [v for _, v in c_db.values()], [c_q[q][1] for q in gt],
                [v for _, v in db.values()], [queries[q][1] for q in gt],
            )
        database = {i: (c_db[i][1], db[i][1]) for i in ids}
        qs = {q: (c_q[q][1], queries[q][1]) for q in gt}
        run = evaluate_run(qs, database, "fused", alpha=args.alpha, rescale=rescale)
    elif kinds == {"bow"}:
        idf = tfidf_weights([v for _, v in db.values()])
        run = evaluate_run({q: queries[q][1] for q in gt}, {i: v for i, (_, v) in db.items()}, "tfidf", idf=idf)
    else:
        run = evaluate_run({q: queries[q][1] for q in gt}, {i: v for i, (_, v) in db.items()}, "euclidean")
    _report(args, per_query_ap(run, gt), run)


def cmd_match(args):
    gt = _ground_truth(args)
    db = {img.image_id: img for img in io.read_descriptors(args.db)}
    queries = {img.image_id: img for img in io.read_descriptors(args.queries)}
    missing = [q for q in gt if q not in queries]
    if missing:
        raise UsageError(f"no query descriptors for {missing[:5]}")
    run = evaluate_run({q: queries[q] for q in gt}, db, "direct", ratio=args.ratio)
    _report(args, per_query_ap(run, gt), run)


def cmd_synth(args):
    rng = np.random.default_rng(args.seed)
    if args.model:
        model = io.read_model(args.model)
        if not isinstance(model, BernoulliMixture):
            raise UsageError("synth needs a BMM1 model")
        width = len(str(max(args.images - 1, 0)))
        images = []
        for n in range(args.images):
            bits, _ = bmm_sample(model, args.per_image, rng)
            images.append(PackedDescriptorSet.from_bits(bits, f"img{n:0{width}d}"))
        labels = None
    else:
        models = synthetic.class_models(rng, args.classes, args.dim, shape=args.shape)
        corpus = synthetic.draw_corpus(rng, models, args.per_class, args.per_image)
        images, labels = corpus.images, corpus.labels
    if (args.gt or args.cnn) and labels is None:
        raise UsageError("--gt and --cnn need a class corpus (--classes)")
    io.write_descriptors(args.output, images)
    if args.gt:
        io.write_ground_truth(args.gt, corpus.ground_truth(exclude_query=False))
    if args.cnn:
        vecs = synthetic.cnn_like_vectors(rng, labels, args.cnn_dim)
        io.write_vectors(args.cnn, [GlobalVector("cnn", v, img.image_id) for v, img in zip(vecs, images)])


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _file_args(argv) -> list:
    """Arguments naming existing files, including comma-separated pairs."""
    out = []
    for a in argv:
        for part in str(a).split(","):
            if part and not part.startswith("-") and Path(part).is_file() and part not in out:
                out.append(part)
    return out


def cmd_pipeline(args):
    """Run a JSON manifest of CLI steps and hash every file each step touched.

    The manifest holds ``steps`` (a list of argv lists, paths relative to the
    manifest) and optionally ``inputs`` mapping paths to expected sha256.
    """
    manifest_path = Path(args.manifest).resolve()
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(manifest_path, e.pos, "JSON manifest", e.msg) from None
    steps = manifest.get("steps")
    if not isinstance(steps, list) or not all(isinstance(s, list) for s in steps):
        raise ParseError(manifest_path, 0, "a 'steps' list of argv lists")
    lock_path = Path(args.lock).resolve() if args.lock else manifest_path.with_name(
        manifest_path.name + ".lock.json"
    )
    prev = os.getcwd()
    os.chdir(manifest_path.parent)
    try:
        for path, digest in manifest.get("inputs", {}).items():
            if _sha256(path) != digest:
                raise UsageError(f"input {path} does not match its recorded hash")
        record = []
        for argv in steps:
            if argv and argv[0] == "pipeline":
                raise UsageError("pipelines cannot nest")
            buf = _io.StringIO()
            with contextlib.redirect_stdout(buf):
                code = main([str(a) for a in argv])
            sys.stdout.write(buf.getvalue())
            if code != EXIT_OK:
                raise _StepFailed(code, argv)
            files = _file_args(argv)
            record.append({
                "argv": argv,
                "files": {f: _sha256(f) for f in files},
                "stdout_sha256": hashlib.sha256(buf.getvalue().encode()).hexdigest(),
            })
        lock = {"manifest": manifest, "steps": record}
        io.atomic_write(lock_path, (json.dumps(lock, indent=2, sort_keys=True) + "\n").encode())
    finally:
        os.chdir(prev)


class _StepFailed(Exception):
    def __init__(self, code, argv):
        self.code = code
        super().__init__(f"step {' '.join(map(str, argv))} exited with {code}")


# -- parser -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="binagg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="learn a vocabulary or mixture model")
    tsub = train.add_subparsers(dest="what", required=True, parser_class=_Parser)
    for name in ("vocab", "bmm", "gmm"):
        t = tsub.add_parser(name)
        if name == "vocab":
            t.add_argument("--method", required=True, choices=("kmeans", "kmajority", "kmedoids"))
        else:
            t.add_argument("--eps", type=float, default=0.05)
        t.add_argument("--k", type=int, required=True)
        t.add_argument("--sample", required=True, help="DSC1 file of training descriptors")
        t.add_argument("--sample-size", type=int, default=None,
                       help="draw this many descriptors uniformly from the pooled sample")
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--max-iters", type=int, default=100 if name == "vocab" else 200)
        t.add_argument("-o", "--output", required=True)
        t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="aggregate descriptor sets into global vectors")
    e.add_argument("--method", required=True, choices=("bow", "vlad", "fv-bmm", "fv-gmm"))
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--include-weights", action="store_true")
    e.add_argument("--include-variances", action="store_true")
    e.add_argument("--stats-form", action="store_true")
    e.set_defaults(func=cmd_encode)

    pp = sub.add_parser("postproc", help="power-law, L2 and optional PCA")
    pp.add_argument("--beta", type=float, default=0.5)
    pp.add_argument("--pca", default=None)
    pp.add_argument("--renorm", action=argparse.BooleanOptionalAction, default=True)
    pp.add_argument("--pca-first", action="store_true")
    pp.add_argument("-i", "--input", required=True)
    pp.add_argument("-o", "--output", required=True)
    pp.set_defaults(func=cmd_postproc)

    pca = sub.add_parser("pca", help="PCA projections")
    psub = pca.add_subparsers(dest="what", required=True, parser_class=_Parser)
    pt = psub.add_parser("train")
    pt.add_argument("--dim", type=int, required=True)
    pt.add_argument("--sample", required=True)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("-o", "--output", required=True)
    pt.set_defaults(func=cmd_pca)

    f = sub.add_parser("fuse", help="pairwise fused CNN/aggregate distances")
    f.add_argument("--alpha", type=float, required=True)
    f.add_argument("--left", required=True, help="CNN vectors")
    f.add_argument("--right", required=True, help="aggregated vectors")
    f.add_argument("--rescale", choices=("max",), default=None)
    f.add_argument("-o", "--output", default=None)
    f.set_defaults(func=cmd_fuse)

    for name, func in (("evaluate", cmd_evaluate), ("match", cmd_match)):
        ev = sub.add_parser(name)
        ev.add_argument("--db", required=True)
        ev.add_argument("--queries", required=True)
        ev.add_argument("--gt", required=True)
        ev.add_argument("--exclude-query", action="store_true",
                        help="drop each query from its own ranking")
        ev.add_argument("--kv", action="store_true", help="also print key=value lines")
        ev.add_argument("--ranking", default=None, help="write ranked lists here")
        if name == "evaluate":
            ev.add_argument("--fuse", default=None, metavar="CNN_DB,CNN_QUERIES")
            ev.add_argument("--alpha", type=float, default=0.5)
            ev.add_argument("--rescale", choices=("max",), default=None)
        else:
            ev.add_argument("--ratio", type=float, default=0.8)
        ev.set_defaults(func=func)

    s = sub.add_parser("synth", help="sample synthetic descriptor sets")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="BMM1 model to sample every image from")
    src.add_argument("--classes", type=int, help="draw a labelled corpus with this many classes")
    s.add_argument("--images", type=int, default=10, help="image count with --model")
    s.add_argument("--per-class", type=int, default=10)
    s.add_argument("--per-image", type=int, required=True)
    s.add_argument("--dim", type=int, default=64, help="bits per descriptor with --classes")
    s.add_argument("--shape", type=float, default=0.5, help="Beta shape of the bit probabilities")
    s.add_argument("--gt", default=None, help="also write leave-one-out ground truth")
    s.add_argument("--cnn", default=None, help="also write class-clustered CNN-like vectors")
    s.add_argument("--cnn-dim", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    pl = sub.add_parser("pipeline", help="run a JSON manifest of steps")
    pl.add_argument("manifest")
    pl.add_argument("--lock", default=None, help="where to write output hashes")
    pl.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"binagg: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ParseError as e:
        print(f"binagg: parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except NumericDegeneracyError as e:
        print(f"binagg: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except _StepFailed as e:
        print(f"binagg: {e}", file=sys.stderr)
        return e.code
    except (UsageError, ValueError, FileNotFoundError) as e:
        print(f"binagg: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
