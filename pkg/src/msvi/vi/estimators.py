"""Importance-weighted bound and its score-function gradient estimators.

For one observation and draws ``pi_1..pi_M ~ q`` let
``l_m = log p(z, pi_m) - log q(pi_m)`` and ``w_m = softmax(l)_m``.  Then

    bound      = log mean_m exp(l_m)
    d/d model  = sum_m w_m * d log p(z, pi_m)
    d/d epa    = -sum_m w_m * s_m + bound * sum_m s_m,    s_m = d log q(pi_m)

are unbiased for the gradients of the expected bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..core import DomainError, RandomStream, distance_matrices, site_distance_matrix
from ..model import ModelParams, st_loglik_batch
from ..model.params import LogisticParams
from ..partition import EpaParams, epa_log_pmf_batch, epa_sample_labels


@dataclass
class BatchTerms:
    """Per-observation outputs for a batch of observations."""

    iwae: np.ndarray  # (b,)
    grad_model: np.ndarray  # (b, p), natural parameters
    grad_epa: np.ndarray  # (b, 3), natural (alpha, delta, rho)
    n_dead: int  # observations whose M log-weights were all -inf


def observation_distances(Z: np.ndarray, sites=None, distance: str = "observation") -> np.ndarray:
    Z = np.atleast_2d(Z)
    if distance == "observation":
        return distance_matrices(Z)
    if distance == "euclidean":
        return np.broadcast_to(site_distance_matrix(sites), (Z.shape[0], Z.shape[1], Z.shape[1]))
    raise ValueError(f"unknown distance {distance!r}")


def batch_terms(model: ModelParams, epa: EpaParams, Z, dists, uniforms, grad: bool = True) -> BatchTerms:
    """Bound and gradient estimates for each row of ``Z``.

    ``uniforms`` has shape (b, M, D) and drives the EPA sampler, so the result
    is a pure function of its inputs.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    b, D = Z.shape
    M = uniforms.shape[1]
    d_rep = np.repeat(np.asarray(dists), M, axis=0)
    z_rep = np.repeat(Z, M, axis=0)
    labels = epa_sample_labels(epa, d_rep, uniforms.reshape(b * M, D))
    if grad:
        logq, score = epa_log_pmf_batch(epa, d_rep, labels, grad=True)
        logp, dlogp = st_loglik_batch(model, z_rep, labels, grad=True)
    else:
        logq = epa_log_pmf_batch(epa, d_rep, labels)
        logp = st_loglik_batch(model, z_rep, labels)
    lw = (logp - logq).reshape(b, M)
    dead = np.all(lw == -np.inf, axis=1)
    with np.errstate(invalid="ignore"):
        lse = logsumexp(lw, axis=1)
        iwae = lse - np.log(M)
        if not grad:
            return BatchTerms(iwae, np.empty((b, 0)), np.empty((b, 0)), int(dead.sum()))
        w = np.exp(lw - lse[:, None])
        dlogp = dlogp.reshape(b, M, -1)
        # zero-weight samples may carry non-finite derivatives; they do not contribute
        dlogp = np.where(w[..., None] > 0, dlogp, 0.0)
        g_model = np.einsum("bm,bmp->bp", w, dlogp)
        score = score.reshape(b, M, 3)
        g_epa = -np.einsum("bm,bmp->bp", w, score) + iwae[:, None] * score.sum(axis=1)
    g_model[dead] = np.nan
    g_epa[dead] = np.nan
    return BatchTerms(iwae, g_model, g_epa, int(dead.sum()))


def _single(model, epa, z, M, rng, dist, grad):
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    z = np.asarray(z, dtype=float)
    dist = observation_distances(z[None, :]) if dist is None else np.asarray(dist)[None]
    gen = rng.generator() if isinstance(rng, RandomStream) else rng
    u = gen.random((1, M, z.size))
    return batch_terms(model, epa, z[None, :], dist, u, grad=grad)


def iwae_estimate(model: ModelParams, epa: EpaParams, z, M: int, rng, dist=None) -> float:
    """One draw of ``log mean_m p(z, pi_m) / q(pi_m)`` with ``pi_m ~ q``."""
    return float(_single(model, epa, z, M, rng, dist, grad=False).iwae[0])


def grad_theta_estimate(model: ModelParams, epa: EpaParams, z, M: int, rng, dist=None) -> np.ndarray:
    """Self-normalized estimate of the bound's gradient in the model parameters."""
    if isinstance(model, LogisticParams) and model.theta >= 1.0:
        raise DomainError("theta = 1 is on the boundary; the gradient needs theta < 1")
    return _single(model, epa, z, M, rng, dist, grad=True).grad_model[0]


def grad_phi_estimate(model: ModelParams, epa: EpaParams, z, M: int, rng, dist=None) -> np.ndarray:
    """Score-function estimate of the bound's gradient in (alpha, delta, rho)."""
    return _single(model, epa, z, M, rng, dist, grad=True).grad_epa[0]
