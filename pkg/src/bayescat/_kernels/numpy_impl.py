"""Vectorized numpy/scipy implementations of the hot numeric kernels.

This is the reference lane: the optional compiled lane in ``_cyk`` must agree
with every function here to 1e-12 on shared inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

# Probabilities are clamped to this band before any logarithm.
PROB_EPS = 1e-12

BACKEND_NAME = "numpy"


def norm_cdf(x: np.ndarray) -> np.ndarray:
    """Standard normal CDF, absolute error below 1e-12 (erf-class routine)."""
    return ndtr(np.asarray(x, dtype=np.float64))


def clamp_prob(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def probit_clamped(z: np.ndarray) -> np.ndarray:
    """Phi(z) clamped into [PROB_EPS, 1 - PROB_EPS]."""
    return clamp_prob(ndtr(np.asarray(z, dtype=np.float64)))


def predictive_matrix(theta: np.ndarray, loadings: np.ndarray, intercepts: np.ndarray) -> np.ndarray:
    """Success probabilities Phi(B'theta + D) for every draw x item pair.

    theta: (M, K') draws, loadings: (J, K'), intercepts: (J,).  Returns (M, J),
    clamped.  K' may be a subset of the bank's factors when criteria are
    restricted to prioritized coordinates.
    """
    z = theta @ loadings.T + intercepts[np.newaxis, :]
    return probit_clamped(z)


def eap_kl_scores(p: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    """Mean KL from the plug-in Bernoulli at the posterior mean to each draw.

    score_j = mean_i KL(Bern(p_hat_j) || Bern(P_ij)).
    """
    p_hat = clamp_prob(np.asarray(p_hat, dtype=np.float64))
    mean_log_p = np.mean(np.log(p), axis=0)
    mean_log_q = np.mean(np.log1p(-p), axis=0)
    return p_hat * (np.log(p_hat) - mean_log_p) + (1.0 - p_hat) * (np.log1p(-p_hat) - mean_log_q)


def max_pos_scores(p: np.ndarray) -> np.ndarray:
    """Expected KL from the posterior predictive to the draw-level likelihood.

    score_j = sum_y c_j(y) * mean_i log(c_j(y) / f(y | theta_i)) with
    c_j = mean_i P_ij.
    """
    c = clamp_prob(np.mean(p, axis=0))
    mean_log_p = np.mean(np.log(p), axis=0)
    mean_log_q = np.mean(np.log1p(-p), axis=0)
    return c * (np.log(c) - mean_log_p) + (1.0 - c) * (np.log1p(-c) - mean_log_q)


def mi_scores_weighted(p: np.ndarray) -> np.ndarray:
    """Mutual information via importance reweighting of the current draws.

    For each candidate and response y, the draws are reweighted by the
    response likelihood (self-normalized), the weighted mean of
    log(f(y | theta) / c(y)) is taken, and the two response branches are
    combined with predictive weights c(y).  Zero total weight contributes 0.
    """
    m = p.shape[0]
    c = clamp_prob(np.mean(p, axis=0))
    log_p = np.log(p)
    log_q = np.log1p(-p)
    scores = np.empty(p.shape[1], dtype=np.float64)
    for j in range(p.shape[1]):
        w1 = p[:, j]
        s1 = w1.sum()
        inner1 = float(np.dot(w1 / s1, log_p[:, j] - np.log(c[j]))) if s1 > 0.0 else 0.0
        w0 = 1.0 - p[:, j]
        s0 = w0.sum()
        inner0 = float(np.dot(w0 / s0, log_q[:, j] - np.log1p(-c[j]))) if s0 > 0.0 else 0.0
        scores[j] = c[j] * inner1 + (1.0 - c[j]) * inner0
    return scores


def mi_scores_pooled(p: np.ndarray) -> np.ndarray:
    """Mutual information as mean prediction uncertainty of the draws.

    score_j = mean_i [ P_ij log(P_ij / c_j) + (1 - P_ij) log((1 - P_ij) / (1 - c_j)) ].
    Algebraically identical to the reweighted form on shared draws; kept as an
    independent summation order so the two routes cross-check each other.
    """
    c = clamp_prob(np.mean(p, axis=0))
    kl = p * (np.log(p) - np.log(c)[np.newaxis, :])
    kl += (1.0 - p) * (np.log1p(-p) - np.log1p(-c)[np.newaxis, :])
    return np.mean(kl, axis=0)


def max_var_scores(p: np.ndarray) -> np.ndarray:
    """Population variance of the predictive probability draws per item."""
    c = np.mean(p, axis=0)
    return np.mean((p - c[np.newaxis, :]) ** 2, axis=0)
