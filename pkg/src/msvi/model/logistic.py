"""Multivariate logistic max-stable model.

With ``x_i = z_i ** (-1/theta)`` and ``S = sum(x_i)`` the exponent measure is
``V = S ** theta`` and every block factor of the partition likelihood has the
closed form

    -dV/dz_tau = c_k * S ** (theta - k) * prod_{i in tau} x_i / z_i,
    c_k = theta ** (1 - k) * prod_{j=1}^{k-1} (j - theta),      k = |tau|,

so a block contributes only through its size and the shared sum ``S``.
"""

from __future__ import annotations

from math import lgamma

import numpy as np
from scipy.special import logsumexp

from ..core import DomainError
from .params import LogisticParams


def log_block_constants(theta: float, D: int, grad: bool = False):
    """``log c_k`` for k = 0..D (entry 0 unused) and optionally d/dtheta."""
    k = np.arange(D + 1)
    j = np.arange(1, D + 1)
    with np.errstate(divide="ignore"):
        log_terms = np.log(j - theta)
    cum = np.concatenate([[0.0], np.cumsum(log_terms)])  # sum_{j<=m} log(j - theta)
    logc = np.empty(D + 1)
    logc[0] = 0.0
    logc[1:] = (1 - k[1:]) * np.log(theta) + cum[:-1]
    if not grad:
        return logc
    with np.errstate(divide="ignore"):
        inv = 1.0 / (j - theta)
    dcum = np.concatenate([[0.0], np.cumsum(inv)])
    dlogc = np.empty(D + 1)
    dlogc[0] = 0.0
    dlogc[1:] = (1 - k[1:]) / theta - dcum[:-1]
    return logc, dlogc


def _log_x(theta: float, z: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -np.log(z) / theta


def exponent_measure(params: LogisticParams, z) -> float:
    z = np.asarray(z, dtype=float)
    if np.all(np.isinf(z)):
        raise DomainError("exponent measure needs at least one finite coordinate")
    theta = float(params.theta)
    return float(np.exp(theta * logsumexp(_log_x(theta, z))))


def _sums(theta: float, Z: np.ndarray):
    logz = np.log(Z)
    logx = -logz / theta
    logS = logsumexp(logx, axis=-1)
    # d log S / d theta = sum softmax(logx) * log z / theta^2
    w = np.exp(logx - logS[..., None])
    dlogS = (w * logz).sum(axis=-1) / theta**2
    return logz, logx, logS, dlogS


def log_neg_vtau_masks(params: LogisticParams, z, masks, grad: bool = False):
    """``log(-dV/dz_tau)`` for each bitmask in ``masks`` (one observation)."""
    theta = float(params.theta)
    z = np.asarray(z, dtype=float)
    D = z.size
    masks = np.asarray(masks, dtype=np.int64)
    member = ((masks[:, None] >> np.arange(D)) & 1).astype(bool)
    size = member.sum(axis=1)
    logz, logx, logS, dlogS = _sums(theta, z)
    logc, dlogc = log_block_constants(theta, D, grad=True)
    coord = logx - logz
    vals = logc[size] + (theta - size) * logS + member @ coord
    if not grad:
        return vals
    dcoord = logz / theta**2
    g = dlogc[size] + logS + (theta - size) * dlogS + member @ dcoord
    return vals, g[:, None]


def st_loglik_batch(params: LogisticParams, Z, labels, grad: bool = False):
    """Joint log-density of observation rows ``Z`` and partitions ``labels``.

    Both arrays have shape (B, D).  With ``grad=True`` also returns the
    (B, 1) derivative with respect to theta.
    """
    theta = float(params.theta)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    labels = np.atleast_2d(labels)
    B, D = Z.shape
    logz, logx, logS, dlogS = _sums(theta, Z)
    sizes = (labels[:, :, None] == np.arange(D)[None, None, :]).sum(axis=1)
    nblocks = (sizes > 0).sum(axis=1)
    logc, dlogc = log_block_constants(theta, D, grad=True)
    V = np.exp(theta * logS)
    const = (logx - logz).sum(axis=1)
    vals = -V + const + logc[sizes].sum(axis=1) + (nblocks * theta - D) * logS
    if not grad:
        return vals
    dV = V * (logS + theta * dlogS)
    dconst = logz.sum(axis=1) / theta**2
    with np.errstate(invalid="ignore"):
        dblocks = np.where(sizes > 0, dlogc[sizes], 0.0).sum(axis=1)
    g = -dV + dconst + dblocks + nblocks * logS + (nblocks * theta - D) * dlogS
    return vals, g[:, None]


def full_loglik(params: LogisticParams, z):
    """Exact full log-likelihood without enumerating partitions.

    The partition sum of block weights ``w_k = c_k * V`` is the complete Bell
    polynomial ``B_D(w_1, ..., w_D)``, computed by the recursion
    ``B_{m+1} = sum_k C(m, k) w_{k+1} B_{m-k}`` in log space.  ``z`` may be a
    single observation (returns a float) or an (n, D) array (returns (n,)).
    """
    theta = float(params.theta)
    Z = np.asarray(z, dtype=float)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    n, D = Z.shape
    logz = np.log(Z)
    if theta == 1.0:
        out = np.sum(-1.0 / Z - 2.0 * logz, axis=1)
        return float(out[0]) if single else out
    logx = -logz / theta
    logS = logsumexp(logx, axis=1)
    logV = theta * logS
    logw = log_block_constants(theta, D)[None, :] + logV[:, None]  # (n, k)
    lfact = np.array([lgamma(m + 1) for m in range(D + 1)])
    logB = np.zeros((n, D + 1))
    for m in range(D):
        k = np.arange(m + 1)
        log_binom = lfact[m] - lfact[k] - lfact[m - k]
        logB[:, m + 1] = logsumexp(log_binom + logw[:, k + 1] + logB[:, m - k], axis=1)
    out = -np.exp(logV) + np.sum(logx - logz, axis=1) - D * logS + logB[:, D]
    return float(out[0]) if single else out
