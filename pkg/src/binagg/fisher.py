"""Raw Fisher scores of a Bernoulli mixture and its approximate information matrix.

The encoders use the normalized forms directly; the functions here expose the
unnormalized gradients and the closed-form FIM blocks so they can be checked
against finite differences and Monte-Carlo estimates.
"""

from __future__ import annotations

import numpy as np

from .mixtures import BernoulliMixture, as_real_matrix, bmm_posteriors


def bmm_scores(m: BernoulliMixture, x) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``log p(X)`` w.r.t. the soft-max weights and the means.

    Returns ``(g_alpha, g_mu)`` with shapes ``(K,)`` and ``(K, D)``:

        g_alpha[k]  = sum_t gamma_t(k) - w_k
        g_mu[k, d]  = sum_t gamma_t(k) (x_td - mu_kd) / (mu_kd (1 - mu_kd))
    """
    xr = as_real_matrix(x, m.dim)
    gamma = bmm_posteriors(m, xr)
    g_alpha = gamma.sum(axis=0) - xr.shape[0] * m.weights
    s1 = gamma.T @ xr
    g_mu = (s1 - gamma.sum(axis=0)[:, None] * m.means) / (m.means * (1.0 - m.means))
    return g_alpha, g_mu


def bmm_pointwise_scores(m: BernoulliMixture, x) -> tuple[np.ndarray, np.ndarray]:
    """Per-descriptor scores, shapes ``(T, K)`` and ``(T, K, D)``."""
    xr = as_real_matrix(x, m.dim)
    gamma = bmm_posteriors(m, xr)
    g_alpha = gamma - m.weights[None, :]
    resid = (xr[:, None, :] - m.means[None]) / (m.means * (1.0 - m.means))[None]
    return g_alpha, gamma[:, :, None] * resid


def fim_mu_diagonal(m: BernoulliMixture) -> np.ndarray:
    """Diagonal of the mean block under the sharp-posterior approximation."""
    return m.weights[:, None] / (m.means * (1.0 - m.means))


def fim_alpha(weights) -> np.ndarray:
    """Weight block ``diag(w) - w w^T`` (singular: its rows sum to zero)."""
    w = np.asarray(weights, dtype=np.float64)
    return np.diag(w) - np.outer(w, w)


def reduced_fim_alpha(weights) -> np.ndarray:
    """Weight block restricted to the first K-1 soft-max parameters."""
    return fim_alpha(np.asarray(weights, dtype=np.float64)[:-1])


def reduced_fim_alpha_inverse(weights) -> np.ndarray:
    """Closed-form inverse ``diag(w~)^-1 + e e^T / w_K`` of the reduced block."""
    w = np.asarray(weights, dtype=np.float64)
    head = w[:-1]
    return np.diag(1.0 / head) + np.ones((head.size, head.size)) / w[-1]


def alpha_fisher_kernel(g_alpha_x, g_alpha_y, weights) -> float:
    """Fisher kernel of the weight scores, ``sum_k gx_k gy_k / w_k``."""
    w = np.asarray(weights, dtype=np.float64)
    return float(np.sum(np.asarray(g_alpha_x) * np.asarray(g_alpha_y) / w))
