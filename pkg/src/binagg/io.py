"""On-disk formats.

All binary formats are little-endian and start with an ASCII magic:

    DSC1   u32 dim_bits, u32 n_images, then per image: u32 id length, UTF-8 id,
           u32 descriptor count, count * ceil(dim_bits/64) u64 words
    GVEC1  u32 dim, u8 kind tag, u32 count, count * (u32 id length, UTF-8 id),
           then count * dim f32 values
    VOC1   u8 method tag, u32 k, u32 dim, centroids (f64 K*D, or u64 packed words)
    BMM1   u32 k, u32 dim, f64 weights[K], f64 means[K*D]
    GMM1   as BMM1 followed by f64 variances[K*D]
    PCA1   u32 input dim, u32 output dim, f64 mean, f64 components, f64 variances

GT1 is line-oriented text::

    query <id>
    positive <id>
    junk <id>
    exclude-query

``#`` starts a comment; blank lines are ignored.  Every writer replaces its
target atomically so a failed run never leaves a partial file behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .clustering import Vocabulary
from .descriptors import PackedDescriptorSet, n_words, padding_mask
from .encoders import KINDS, GlobalVector
from .errors import ParseError
from .mixtures import BernoulliMixture, GaussianMixture
from .postproc import PcaModel
from .retrieval import GroundTruth

DSC_MAGIC = b"DSC1"
GVEC_MAGIC = b"GVEC1"
VOC_MAGIC = b"VOC1"
BMM_MAGIC = b"BMM1"
GMM_MAGIC = b"GMM1"
PCA_MAGIC = b"PCA1"

VOC_METHODS = ("kmeans", "kmajority", "kmedoids")


def atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class _Reader:
    def __init__(self, path, data: bytes):
        self.path = path
        self.data = data
        self.pos = 0

    def fail(self, expected, found="", at=None):
        raise ParseError(self.path, self.pos if at is None else at, expected, found)

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            self.fail(f"{what} ({n} bytes)", f"{len(self.data) - self.pos} bytes left")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def magic(self, magic: bytes):
        got = self.data[: len(magic)]
        if got != magic:
            self.fail(f"magic {magic!r}", repr(got), at=0)
        self.pos = len(magic)

    def u8(self, what):
        return self.take(1, what)[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what):
        n = self.u32(f"{what} length")
        start = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            self.fail(f"UTF-8 {what}", "invalid bytes", at=start)

    def array(self, dtype, count, what):
        dt = np.dtype(dtype)
        raw = self.take(dt.itemsize * count, what)
        return np.frombuffer(raw, dtype=dt).copy()

    def finish(self):
        if self.pos != len(self.data):
            self.fail("end of file", f"{len(self.data) - self.pos} trailing bytes")


def _read(path) -> _Reader:
    return _Reader(str(path), Path(path).read_bytes())


def _u32(n) -> bytes:
    return struct.pack("<I", n)


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


# -- descriptors ------------------------------------------------------------


def dumps_descriptors(images) -> bytes:
    images = list(images)
    if not images:
        raise ValueError("nothing to write")
    dim = images[0].dim_bits
    parts = [DSC_MAGIC, _u32(dim), _u32(len(images))]
    for img in images:
        if img.dim_bits != dim:
            raise ValueError("all images in a DSC1 file must share dim_bits")
        parts += [_string(img.image_id), _u32(img.count), img.words.astype("<u8").tobytes()]
    return b"".join(parts)


def write_descriptors(path, images):
    atomic_write(path, dumps_descriptors(images))


def read_descriptors(path) -> list[PackedDescriptorSet]:
    r = _read(path)
    r.magic(DSC_MAGIC)
    dim = r.u32("dim_bits")
    if dim == 0:
        r.fail("positive dim_bits", "0", at=r.pos - 4)
    n = r.u32("image count")
    w = n_words(dim)
    mask = padding_mask(dim)
    out = []
    for _ in range(n):
        image_id = r.string("image id")
        count = r.u32("descriptor count")
        start = r.pos
        words = r.array("<u8", count * w, f"descriptors of {image_id!r}").reshape(count, w)
        bad = np.flatnonzero((words & mask).any(axis=1))
        if bad.size:
            r.fail("zero padding bits", f"nonzero padding in descriptor {bad[0]}", at=start + int(bad[0]) * w * 8)
        out.append(PackedDescriptorSet(dim, words.astype(np.uint64), image_id))
    r.finish()
    return out


# -- global vectors ---------------------------------------------------------


def dumps_vectors(vectors) -> bytes:
    vectors = list(vectors)
    if not vectors:
        raise ValueError("nothing to write")
    kind, dim = vectors[0].kind, vectors[0].dim
    for v in vectors:
        if v.kind != kind or v.dim != dim:
            raise ValueError("all vectors in a GVEC1 file must share kind and dim")
    rows = np.stack([v.values for v in vectors]).astype("<f4")
    parts = [GVEC_MAGIC, _u32(dim), bytes([KINDS.index(kind)]), _u32(len(vectors))]
    parts += [_string(v.image_id) for v in vectors]
    parts.append(rows.tobytes())
    return b"".join(parts)


def write_vectors(path, vectors):
    atomic_write(path, dumps_vectors(vectors))


def read_vectors(path) -> list[GlobalVector]:
    r = _read(path)
    r.magic(GVEC_MAGIC)
    dim = r.u32("dim")
    tag_at = r.pos
    tag = r.u8("kind tag")
    if tag >= len(KINDS):
        r.fail(f"kind tag < {len(KINDS)}", str(tag), at=tag_at)
    count = r.u32("vector count")
    ids = [r.string("image id") for _ in range(count)]
    start = r.pos
    rows = r.array("<f4", count * dim, "vector rows").reshape(count, dim)
    if not np.all(np.isfinite(rows)):
        r.fail("finite values", "NaN or Inf", at=start)
    r.finish()
    return [GlobalVector(KINDS[tag], row, i) for i, row in zip(ids, rows)]


# -- models -----------------------------------------------------------------


def dumps_model(model) -> bytes:
    if isinstance(model, Vocabulary):
        head = VOC_MAGIC + bytes([VOC_METHODS.index(model.method)]) + _u32(model.k) + _u32(model.dim)
        dtype = "<f8" if model.kind == "real" else "<u8"
        return head + model.centroids.astype(dtype).tobytes()
    if isinstance(model, GaussianMixture):
        return b"".join(
            [GMM_MAGIC, _u32(model.k), _u32(model.dim)]
            + [a.astype("<f8").tobytes() for a in (model.weights, model.means, model.variances)]
        )
    if isinstance(model, BernoulliMixture):
        return b"".join(
            [BMM_MAGIC, _u32(model.k), _u32(model.dim)]
            + [a.astype("<f8").tobytes() for a in (model.weights, model.means)]
        )
    if isinstance(model, PcaModel):
        return b"".join(
            [PCA_MAGIC, _u32(model.input_dim), _u32(model.output_dim)]
            + [a.astype("<f8").tobytes() for a in (model.mean, model.components, model.explained_variance)]
        )
    raise TypeError(f"cannot serialize {type(model).__name__}")


def write_model(path, model):
    atomic_write(path, dumps_model(model))


def _build(r: _Reader, start: int, ctor, *args):
    try:
        return ctor(*args)
    except ValueError as e:
        r.fail("valid model parameters", str(e), at=start)


def read_model(path):
    """Load a VOC1, BMM1, GMM1 or PCA1 file, dispatching on the magic."""
    r = _read(path)
    head = r.data[:4]
    if head == VOC_MAGIC:
        r.magic(VOC_MAGIC)
        tag_at = r.pos
        tag = r.u8("method tag")
        if tag >= len(VOC_METHODS):
            r.fail(f"method tag < {len(VOC_METHODS)}", str(tag), at=tag_at)
        k, dim = r.u32("k"), r.u32("dim")
        start = r.pos
        if VOC_METHODS[tag] == "kmeans":
            cents = r.array("<f8", k * dim, "centroids").reshape(k, dim)
        else:
            w = n_words(dim)
            cents = r.array("<u8", k * w, "centroids").reshape(k, w).astype(np.uint64)
        r.finish()
        return _build(r, start, Vocabulary, dim, cents, VOC_METHODS[tag])
    if head in (BMM_MAGIC, GMM_MAGIC):
        r.magic(head)
        k, dim = r.u32("k"), r.u32("dim")
        start = r.pos
        w = r.array("<f8", k, "weights")
        mu = r.array("<f8", k * dim, "means").reshape(k, dim)
        if head == GMM_MAGIC:
            var = r.array("<f8", k * dim, "variances").reshape(k, dim)
            r.finish()
            return _build(r, start, GaussianMixture, w, mu, var)
        r.finish()
        return _build(r, start, BernoulliMixture, w, mu)
    if head == PCA_MAGIC:
        r.magic(PCA_MAGIC)
        d_in, d_out = r.u32("input dim"), r.u32("output dim")
        start = r.pos
        mean = r.array("<f8", d_in, "mean")
        comp = r.array("<f8", d_in * d_out, "components").reshape(d_out, d_in)
        ev = r.array("<f8", d_out, "explained variance")
        r.finish()
        return _build(r, start, PcaModel, mean, comp, ev)
    r.fail("one of VOC1, BMM1, GMM1, PCA1", repr(head), at=0)


# -- ground truth -----------------------------------------------------------


def parse_ground_truth(text: str, path="<string>") -> dict[str, GroundTruth]:
    blocks: dict[str, dict] = {}
    current = None
    offset = 0
    for raw_line in text.splitlines(keepends=True):
        line_at = offset
        offset += len(raw_line.encode("utf-8"))
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(maxsplit=1)
        key = parts[0]
        arg = parts[1].strip() if len(parts) > 1 else ""
        if key == "query":
            if not arg:
                raise ParseError(path, line_at, "query <id>", line)
            if arg in blocks:
                raise ParseError(path, line_at, "unique query id", arg)
            current = blocks[arg] = {
                "positives": set(), "junk": set(), "exclude": False, "at": line_at
            }
            current_id = arg
            continue
        if current is None:
            raise ParseError(path, line_at, "'query <id>' before other lines", line)
        if key in ("positive", "junk"):
            if not arg:
                raise ParseError(path, line_at, f"{key} <id>", line)
            current["positives" if key == "positive" else "junk"].add(arg)
        elif key == "exclude-query" and not arg:
            current["exclude"] = True
        else:
            raise ParseError(path, line_at, "query/positive/junk/exclude-query", line)
        try:
            GroundTruth(current_id, current["positives"], current["junk"])
        except ValueError as e:
            raise ParseError(path, line_at, "consistent ground truth", str(e)) from None
    for q, b in blocks.items():
        if not b["positives"]:
            raise ParseError(path, b["at"], f"at least one positive for query {q!r}", "none")
    return {
        q: GroundTruth(q, b["positives"], b["junk"], b["exclude"]) for q, b in blocks.items()
    }


def read_ground_truth(path) -> dict[str, GroundTruth]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(path, e.start, "UTF-8 text", "invalid bytes") from None
    return parse_ground_truth(text, str(path))


def dumps_ground_truth(gt) -> str:
    lines = []
    for q, g in gt.items():
        lines.append(f"query {q}")
        lines += [f"positive {p}" for p in sorted(g.positives)]
        lines += [f"junk {j}" for j in sorted(g.junk)]
        if g.exclude_query:
            lines.append("exclude-query")
    return "\n".join(lines) + "\n"


def write_ground_truth(path, gt):
    atomic_write(path, dumps_ground_truth(gt).encode("utf-8"))
