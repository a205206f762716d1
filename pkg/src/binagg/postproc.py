"""Power-law and L2 normalization, PCA, and the standard post-processing chain."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .encoders import GlobalVector
from .errors import NumericDegeneracyError

DENSE_PCA_MAX_DIM = 4096


def power_law(v, beta: float = 0.5) -> np.ndarray:
    """Signed power ``sign(x) |x|^beta``, componentwise."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.abs(v) ** beta


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    scale = np.max(np.abs(v)) if v.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        raise NumericDegeneracyError("cannot L2-normalize a zero or non-finite vector")
    # pre-scaling keeps the sum of squares clear of underflow and overflow
    v = v / scale
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Rows of ``components`` are orthonormal principal directions, sorted by
    decreasing ``explained_variance``."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        comp = np.array(self.components, dtype=np.float64)
        ev = np.array(self.explained_variance, dtype=np.float64)
        if comp.ndim != 2 or comp.shape[1] != mean.size or ev.shape != (comp.shape[0],):
            raise ValueError("inconsistent PCA model shapes")
        if comp.shape[0] > comp.shape[1]:
            raise ValueError("output_dim cannot exceed input_dim")
        gram = comp @ comp.T
        if not np.allclose(gram, np.eye(comp.shape[0]), atol=1e-8, rtol=0):
            raise ValueError("PCA components are not orthonormal")
        for a in (mean, comp, ev):
            a.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "explained_variance", ev)

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    @property
    def output_dim(self) -> int:
        return self.components.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PcaModel):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in (
                (self.mean, other.mean),
                (self.components, other.components),
                (self.explained_variance, other.explained_variance),
            )
        )

    __hash__ = None


def _fix_signs(comp: np.ndarray) -> np.ndarray:
    pivot = comp[np.arange(comp.shape[0]), np.argmax(np.abs(comp), axis=1)]
    return comp * np.where(pivot < 0, -1.0, 1.0)[:, None]


def _randomized_directions(xc, out_dim, rng, oversample=10, n_iter=4):
    n, d = xc.shape
    width = min(out_dim + oversample, n, d)
    q = xc @ rng.standard_normal((d, width))
    for _ in range(n_iter):
        q, _ = np.linalg.qr(q)
        q = xc @ (xc.T @ q)
    q, _ = np.linalg.qr(q)
    _, _, vt = np.linalg.svd(q.T @ xc, full_matrices=False)
    return vt[:out_dim]


def _as_matrix(sample) -> np.ndarray:
    if len(sample) and isinstance(sample[0], GlobalVector):
        return np.stack([g.values for g in sample])
    return np.asarray(sample, dtype=np.float64)


def pca_train(sample, out_dim: int, seed: int = 0) -> PcaModel:
    """Fit the top ``out_dim`` principal directions of ``sample``.

    Uses a dense covariance eigendecomposition up to 4096 input dimensions
    and a seeded randomized range finder above that.  Each direction is
    signed so that its largest-magnitude entry is positive.
    """
    x = _as_matrix(sample)
    if x.ndim != 2:
        raise ValueError("PCA sample must be a 2-d array")
    n, d = x.shape
    if out_dim <= 0 or out_dim > d:
        raise ValueError(f"out_dim must lie in [1, {d}]")
    if n <= out_dim:
        raise ValueError(f"PCA needs more than {out_dim} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    if d <= DENSE_PCA_MAX_DIM:
        evals, evecs = np.linalg.eigh(xc.T @ xc / (n - 1))
        comp = evecs[:, np.argsort(evals, kind="stable")[::-1][:out_dim]].T
    else:
        comp = _randomized_directions(xc, out_dim, np.random.default_rng(seed))
    comp = _fix_signs(comp)
    explained = ((xc @ comp.T) ** 2).sum(axis=0) / (n - 1)
    return PcaModel(mean, comp, explained)


def pca_apply(p: PcaModel, v) -> np.ndarray:
    """Project one vector or a ``(N, input_dim)`` batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != p.input_dim:
        raise ValueError(f"vector dim {v.shape[-1]} != PCA input dim {p.input_dim}")
    return (v - p.mean) @ p.components.T


def standard_pipeline(
    raw: GlobalVector,
    pca: PcaModel | None = None,
    beta: float = 0.5,
    renorm: bool = True,
    pca_first: bool = False,
) -> GlobalVector:
    """power-law -> L2 -> [PCA -> L2].

    ``pca_first`` moves the projection in front of the power law.  An all-zero
    input (an empty image) comes back as a zero vector with a warning.
    """
    kind = "pca-reduced" if pca is not None else raw.kind
    out_dim = pca.output_dim if pca is not None else raw.dim
    if not np.any(raw.values):
        warnings.warn(
            f"zero vector for image {raw.image_id!r} passed through unnormalized",
            RuntimeWarning,
            stacklevel=2,
        )
        return GlobalVector(kind, np.zeros(out_dim), raw.image_id, raw.provenance)
    v = raw.values
    if pca is not None and pca_first:
        v = pca_apply(pca, v)
    v = l2_normalize(power_law(v, beta))
    if pca is not None and not pca_first:
        v = pca_apply(pca, v)
        if renorm:
            v = l2_normalize(v)
    return GlobalVector(kind, v, raw.image_id, raw.provenance)
