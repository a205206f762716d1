"""Bernoulli and diagonal Gaussian mixture models fitted with EM."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .clustering import kmeans, squared_distances
from .descriptors import PackedDescriptorSet, unpack_to_real

MU_FLOOR = 1e-4
VAR_FLOOR = 1e-6
WEIGHT_FLOOR = 1e-8


def as_real_matrix(x, dim: int | None = None) -> np.ndarray:
    """Descriptors as a ``(T, D)`` float64 matrix.

    Accepts a :class:`PackedDescriptorSet`, a 2-d array of values, or a
    1-d array holding a single descriptor.
    """
    if isinstance(x, PackedDescriptorSet):
        out = x.to_real()
    else:
        out = np.asarray(x, dtype=np.float64)
        if out.ndim == 1:
            out = out[None, :]
    if out.ndim != 2:
        raise ValueError("descriptors must form a 2-d array")
    if dim is not None and out.shape[1] != dim:
        raise ValueError(f"descriptor dim {out.shape[1]} != model dim {dim}")
    return out


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("mixture weights must be positive")
    if abs(w.sum() - 1.0) > 1e-6:
        raise ValueError(f"mixture weights sum to {w.sum()}, expected 1")
    return w / w.sum()


def _floor_weights(w: np.ndarray) -> np.ndarray:
    w = np.maximum(w, WEIGHT_FLOOR)
    return w / w.sum()


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True, eq=False)
class BernoulliMixture:
    """K multivariate Bernoulli components over D bits.

    Means are clamped into ``[MU_FLOOR, 1 - MU_FLOOR]`` on construction.
    """

    weights: np.ndarray
    means: np.ndarray
    loglik_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        w = _check_weights(self.weights)
        mu = np.array(self.means, dtype=np.float64)
        if mu.ndim != 2 or mu.shape[0] != w.size:
            raise ValueError(f"means must have shape ({w.size}, D), got {mu.shape}")
        if not np.all(np.isfinite(mu)):
            raise ValueError("means must be finite")
        np.clip(mu, MU_FLOOR, 1.0 - MU_FLOOR, out=mu)
        _freeze(w, mu)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BernoulliMixture):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(
            self.means, other.means
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """K diagonal Gaussians; ``variances`` holds sigma squared per dimension."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        w = _check_weights(self.weights)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if mu.ndim != 2 or mu.shape[0] != w.size or var.shape != mu.shape:
            raise ValueError("means and variances must both have shape (K, D)")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ValueError("parameters must be finite")
        np.maximum(var, VAR_FLOOR, out=var)
        _freeze(w, mu, var)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    __hash__ = None


# -- Bernoulli --------------------------------------------------------------


def bmm_log_components(m: BernoulliMixture, x) -> np.ndarray:
    """``log p_k(x_t)`` for every descriptor and component, shape ``(T, K)``."""
    x = as_real_matrix(x, m.dim)
    log_mu = np.log(m.means)
    log_1mu = np.log1p(-m.means)
    return x @ (log_mu - log_1mu).T + log_1mu.sum(axis=1)[None, :]


def bmm_component_logprob(m: BernoulliMixture, k: int, x) -> float:
    """Log-probability of a single descriptor under component ``k``."""
    if isinstance(x, PackedDescriptorSet):
        if x.count != 1:
            raise ValueError("expected exactly one descriptor")
    elif np.asarray(x).dtype == np.uint64:
        x = unpack_to_real(x, m.dim)
    xr = as_real_matrix(x, m.dim)[0]
    mu = m.means[k]
    return float(np.sum(xr * np.log(mu) + (1.0 - xr) * np.log1p(-mu)))


def _posteriors(log_joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = logsumexp(log_joint, axis=1)
    return np.exp(log_joint - norm[:, None]), norm


def bmm_posteriors(m: BernoulliMixture, x) -> np.ndarray:
    """Occupancy probabilities ``gamma_t(k)``, shape ``(T, K)``."""
    gamma, _ = _posteriors(np.log(m.weights)[None, :] + bmm_log_components(m, x))
    return gamma


def bmm_occupancy(m: BernoulliMixture, x) -> np.ndarray:
    """Occupancy row of one descriptor (packed words, bits, or a 1-set)."""
    if not isinstance(x, PackedDescriptorSet) and np.asarray(x).dtype == np.uint64:
        x = unpack_to_real(x, m.dim)
    gamma = bmm_posteriors(m, x)
    if gamma.shape[0] != 1:
        raise ValueError("expected exactly one descriptor")
    return gamma[0]


def bmm_loglik(m: BernoulliMixture, x) -> float:
    xr = as_real_matrix(x, m.dim)
    if xr.shape[0] == 0:
        return 0.0
    lj = np.log(m.weights)[None, :] + bmm_log_components(m, xr)
    return float(logsumexp(lj, axis=1).sum())


def _warn_if_degenerate(x: np.ndarray):
    if x.shape[0] > 1 and np.all(x == x[0]):
        warnings.warn("all training descriptors are identical", RuntimeWarning, stacklevel=3)


def bmm_fit_em(
    sample, k: int, seed: int = 0, eps: float = 0.05, max_iters: int = 200
) -> BernoulliMixture:
    """Maximum-likelihood BMM by EM.

    Starts from uniform weights and means drawn from U(0.25, 0.75); stops when
    the L2 norm of the change of the full mean matrix drops below ``eps``.
    The returned model carries the log-likelihood of every visited parameter
    set in ``loglik_history``.
    """
    x = as_real_matrix(sample)
    t, dim = x.shape
    if k <= 0:
        raise ValueError("k must be positive")
    if t < k:
        raise ValueError(f"sample of {t} descriptors is smaller than k={k}")
    _warn_if_degenerate(x)
    rng = np.random.default_rng(seed)
    w = np.full(k, 1.0 / k)
    mu = rng.uniform(0.25, 0.75, size=(k, dim))
    history = []
    for _ in range(max_iters):
        model = BernoulliMixture(w, mu)
        gamma, norm = _posteriors(np.log(model.weights)[None, :] + bmm_log_components(model, x))
        history.append(float(norm.sum()))
        nk = gamma.sum(axis=0)
        w = _floor_weights(nk / t)
        new_mu = model.means.copy()
        alive = nk > 0
        new_mu[alive] = (gamma[:, alive].T @ x) / nk[alive, None]
        np.clip(new_mu, MU_FLOOR, 1.0 - MU_FLOOR, out=new_mu)
        shift = np.linalg.norm(new_mu - model.means)
        mu = new_mu
        if shift < eps:
            break
    final = BernoulliMixture(w, mu)
    history.append(bmm_loglik(final, x))
    return BernoulliMixture(final.weights, final.means, tuple(history))


def bmm_sample(m: BernoulliMixture, n: int, rng: np.random.Generator):
    """Draw ``n`` descriptors; returns ``(bits (n, D) uint8, labels (n,))``."""
    labels = rng.choice(m.k, size=n, p=m.weights)
    bits = (rng.random((n, m.dim)) < m.means[labels]).astype(np.uint8)
    return bits, labels


# -- Gaussian ---------------------------------------------------------------


def gmm_log_components(m: GaussianMixture, x) -> np.ndarray:
    x = as_real_matrix(x, m.dim)
    out = np.empty((x.shape[0], m.k))
    log_norm = -0.5 * np.log(2.0 * np.pi * m.variances).sum(axis=1)
    for k in range(m.k):
        out[:, k] = log_norm[k] - 0.5 * (((x - m.means[k]) ** 2) / m.variances[k]).sum(axis=1)
    return out


def gmm_posteriors(m: GaussianMixture, x) -> np.ndarray:
    gamma, _ = _posteriors(np.log(m.weights)[None, :] + gmm_log_components(m, x))
    return gamma


def gmm_loglik(m: GaussianMixture, x) -> float:
    xr = as_real_matrix(x, m.dim)
    if xr.shape[0] == 0:
        return 0.0
    lj = np.log(m.weights)[None, :] + gmm_log_components(m, xr)
    return float(logsumexp(lj, axis=1).sum())


def _weighted_variances(x, gamma, nk, mu):
    var = np.empty_like(mu)
    for k in range(mu.shape[0]):
        var[k] = gamma[:, k] @ ((x - mu[k]) ** 2) / nk[k]
    return var


def gmm_fit_em(
    sample, k: int, seed: int = 0, eps: float = 0.05, max_iters: int = 200
) -> GaussianMixture:
    """Diagonal GMM by EM, initialized from k-means.

    Means start at the k-means centroids; every diagonal entry of component
    k starts at the mean (over dimensions) variance of k-means cluster k.
    Weights start uniform.
    """
    x = as_real_matrix(sample)
    t, dim = x.shape
    if k <= 0:
        raise ValueError("k must be positive")
    if t < k:
        raise ValueError(f"sample of {t} descriptors is smaller than k={k}")
    _warn_if_degenerate(x)
    vocab = kmeans(x, k, seed=seed)
    mu = vocab.centroids.copy()
    labels = np.argmin(squared_distances(x, mu), axis=1)
    var = np.empty_like(mu)
    for j in range(k):
        members = x[labels == j]
        var[j] = (members if len(members) > 1 else x).var(axis=0).mean()
    w = np.full(k, 1.0 / k)
    history = []
    for _ in range(max_iters):
        model = GaussianMixture(w, mu, var)
        gamma, norm = _posteriors(np.log(model.weights)[None, :] + gmm_log_components(model, x))
        history.append(float(norm.sum()))
        nk = gamma.sum(axis=0)
        w = _floor_weights(nk / t)
        new_mu = model.means.copy()
        var = model.variances.copy()
        alive = nk > 0
        new_mu[alive] = (gamma[:, alive].T @ x) / nk[alive, None]
        var[alive] = _weighted_variances(x, gamma[:, alive], nk[alive], new_mu[alive])
        np.maximum(var, VAR_FLOOR, out=var)
        shift = np.linalg.norm(new_mu - model.means)
        mu = new_mu
        if shift < eps:
            break
    final = GaussianMixture(w, mu, var)
    history.append(gmm_loglik(final, x))
    return GaussianMixture(final.weights, final.means, final.variances, tuple(history))
