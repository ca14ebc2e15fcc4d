"""Brown-Resnick max-stable model with a power semivariogram.

Write ``G[k, l] = 2 * gamma(s_k - s_l)`` for the variogram matrix.  For a
reference site ``j`` the log-ratios ``log(Y_k / Y_j)`` of the tilted spectral
function are Gaussian with covariance

    Sig_j[k, l] = (G[k, j] + G[l, j] - G[k, l]) / 2,

and with ``y_k = log(z_k / z_j) + G[k, j] / 2``:

    V(z)           = sum_j Phi_{D-1}(y^(j); Sig_j) / z_j,
    -dV/dz_tau (z) = phi_{|A|}(y_A; Sig_AA) * Phi_{|B|}(y_B | y_A)
                     / (z_j^2 prod_{k in A} z_k),

where ``j = min(tau)``, ``A = tau \\ {j}``, ``B`` the sites outside ``tau``, and
the last factor is the conditional Gaussian orthant probability.  Gaussian
probabilities of dimension >= 2 come from the fixed-shift QMC kernel, which
keeps the approximate likelihood smooth in the parameters.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import expit, logit, logsumexp

from ..core import DomainError, NumericDomainError, RandomStream
from ..mvn import mvn_cdf_batch, std_normal_cdf
from .params import BrownResnickParams, QmcSettings

FD_STEP = 1e-5
LOG_2PI = np.log(2.0 * np.pi)


@lru_cache(maxsize=64)
def _shifts(qmc: QmcSettings, dim: int) -> np.ndarray:
    if dim <= 1:
        return np.zeros((qmc.n_shifts, 0))
    return RandomStream(qmc.seed, (dim,)).generator().random((qmc.n_shifts, dim - 1))


def bivariate_exponent_measure(z1, z2, a):
    """Closed form for D = 2 with ``a = sqrt(2 * gamma(h))`` (Husler-Reiss)."""
    z1, z2, a = np.asarray(z1, float), np.asarray(z2, float), np.asarray(a, float)
    return (std_normal_cdf(a / 2 + np.log(z2 / z1) / a) / z1
            + std_normal_cdf(a / 2 + np.log(z1 / z2) / a) / z2)


def _sigmas(G: np.ndarray) -> np.ndarray:
    """``Sig[..., j, k, l]`` for every reference site ``j`` (rows/cols ``j`` are zero)."""
    Gj = np.swapaxes(G, -1, -2)  # Gj[..., j, k] = G[..., k, j]
    return 0.5 * (Gj[..., :, :, None] + Gj[..., :, None, :] - G[..., None, :, :])


def _tilted_means(G: np.ndarray, logz: np.ndarray) -> np.ndarray:
    """``y[..., j, k] = log(z_k / z_j) + G[k, j] / 2``."""
    return logz[None, :] - logz[:, None] + 0.5 * np.swapaxes(G, -1, -2)


def _orthant(upper, cov, qmc: QmcSettings):
    """Standardize and evaluate P(N(0, cov) <= upper) for stacked problems."""
    P, d = upper.shape
    if d == 0:
        return np.ones(P), np.zeros(P)
    sd = np.sqrt(np.clip(np.diagonal(cov, axis1=-2, axis2=-1), 1e-300, None))
    b = upper / sd
    corr = cov / (sd[:, :, None] * sd[:, None, :])
    idx = np.arange(d)
    corr[:, idx, idx] = 1.0
    return mvn_cdf_batch(b, corr, _shifts(qmc, d), qmc.n_points)


def _exponent_terms(G: np.ndarray, z: np.ndarray, qmc: QmcSettings):
    """V and its QMC error for a stack of variogram matrices G (K, D, D)."""
    K, D, _ = G.shape
    logz = np.log(z)
    if D == 1:
        return np.full(K, 1.0 / z[0]), np.zeros(K)
    Sig = _sigmas(G)  # (K, j, k, l)
    Y = _tilted_means(G, logz)  # (K, j, k)
    others = np.array([[k for k in range(D) if k != j] for j in range(D)])
    jj = np.arange(D)
    cov = Sig[:, jj[:, None, None], others[:, :, None], others[:, None, :]]
    up = Y[:, jj[:, None], others]
    prob, err = _orthant(up.reshape(K * D, D - 1), cov.reshape(K * D, D - 1, D - 1), qmc)
    prob, err = prob.reshape(K, D), err.reshape(K, D)
    return (prob / z).sum(axis=1), (err / z).sum(axis=1)


def _block_terms(G: np.ndarray, z: np.ndarray, masks: np.ndarray, qmc: QmcSettings) -> np.ndarray:
    """``log(-dV/dz_tau)`` for each mask and each variogram matrix: (K, n_masks)."""
    K, D, _ = G.shape
    logz = np.log(z)
    masks = np.asarray(masks, dtype=np.int64)
    member = ((masks[:, None] >> np.arange(D)) & 1).astype(bool)
    size = member.sum(axis=1)
    out = np.empty((K, masks.size))
    Sig = _sigmas(G)
    Y = _tilted_means(G, logz)
    for s in np.unique(size):
        sel = np.flatnonzero(size == s)
        mem = member[sel]
        j = mem.argmax(axis=1)
        rest = mem.copy()
        rest[np.arange(sel.size), j] = False
        A = np.array([np.flatnonzero(r) for r in rest], dtype=np.int64).reshape(sel.size, s - 1)
        B = np.array([np.flatnonzero(~m) for m in mem], dtype=np.int64).reshape(sel.size, D - s)
        base = -2.0 * logz[j] - (logz[A].sum(axis=1) if s > 1 else 0.0)
        yA = Y[:, j[:, None], A]  # (K, n, dA)
        yB = Y[:, j[:, None], B]
        SAA = Sig[:, j[:, None, None], A[:, :, None], A[:, None, :]]
        SBA = Sig[:, j[:, None, None], B[:, :, None], A[:, None, :]]
        SBB = Sig[:, j[:, None, None], B[:, :, None], B[:, None, :]]
        n = sel.size
        if s > 1:
            L = np.linalg.cholesky(SAA)
            u = np.linalg.solve(L, yA[..., None])[..., 0]
            logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
            logphi = -0.5 * (u * u).sum(axis=-1) - 0.5 * logdet - 0.5 * (s - 1) * LOG_2PI
            if D > s:
                W = np.linalg.solve(L, np.swapaxes(SBA, -1, -2))  # L^-1 S_AB
                mu = np.einsum("knai,kna->kni", W, u)
                C = SBB - np.einsum("knai,knaj->knij", W, W)
            else:
                mu, C = yB, SBB
        else:
            logphi = np.zeros((K, n))
            mu, C = np.zeros_like(yB), SBB
        if D > s:
            prob, _ = _orthant((yB - mu).reshape(K * n, D - s), C.reshape(K * n, D - s, D - s), qmc)
            with np.errstate(divide="ignore"):
                logprob = np.log(prob).reshape(K, n)
        else:
            logprob = 0.0
        out[:, sel] = base[None, :] + logphi + logprob
    if np.any(np.isnan(out)):
        raise NumericDomainError(
            f"Brown-Resnick block term is NaN for z={z}, masks={masks[np.isnan(out).any(axis=0)]}"
        )
    return out


def _unconstrained(params: BrownResnickParams) -> np.ndarray:
    return np.array([np.log(params.lam), logit(params.nu / 2.0)])


def _variograms(params: BrownResnickParams, grad: bool) -> np.ndarray:
    """Variogram matrices at the parameters, plus central-difference probes."""
    if not grad:
        return params.variogram_matrix()[None]
    u = _unconstrained(params)
    if not np.all(np.isfinite(u)):
        raise DomainError("Brown-Resnick gradients need nu strictly inside (0, 2)")
    probes = [u]
    for i in range(2):
        for sgn in (1.0, -1.0):
            v = u.copy()
            v[i] += sgn * FD_STEP
            probes.append(v)
    return np.stack([
        BrownResnickParams(np.exp(v[0]), 2.0 * expit(v[1]), params.sites, params.qmc).variogram_matrix()
        for v in probes
    ])


def _fd_to_natural(params: BrownResnickParams, vals: np.ndarray) -> np.ndarray:
    """Turn probe values (5, ...) into gradients w.r.t. (lam, nu), shape (..., 2)."""
    gu = np.stack([(vals[1] - vals[2]), (vals[3] - vals[4])], axis=-1) / (2.0 * FD_STEP)
    jac = np.array([params.lam, params.nu * (1.0 - params.nu / 2.0)])
    return gu / jac


def exponent_measure_with_error(params: BrownResnickParams, z) -> tuple[float, float]:
    z = np.asarray(z, dtype=float)
    finite = np.isfinite(z)
    if not np.any(finite):
        raise DomainError("exponent measure needs at least one finite coordinate")
    if not np.all(finite):
        sub = BrownResnickParams(params.lam, params.nu, params.sites[finite], params.qmc)
        return exponent_measure_with_error(sub, z[finite])
    V, err = _exponent_terms(params.variogram_matrix()[None], z, params.qmc)
    return float(V[0]), float(err[0])


def exponent_measure(params: BrownResnickParams, z) -> float:
    return exponent_measure_with_error(params, z)[0]


def exponent_measure_grad(params: BrownResnickParams, z):
    z = np.asarray(z, dtype=float)
    V, _ = _exponent_terms(_variograms(params, True), z, params.qmc)
    return float(V[0]), _fd_to_natural(params, V)


def log_neg_vtau_masks(params: BrownResnickParams, z, masks, grad: bool = False):
    z = np.asarray(z, dtype=float)
    vals = _block_terms(_variograms(params, grad), z, masks, params.qmc)
    if not grad:
        return vals[0]
    return vals[0], _fd_to_natural(params, vals)


def st_loglik_batch(params: BrownResnickParams, Z, labels, grad: bool = False):
    """Joint log-density of rows ``Z`` and partitions ``labels`` (both (B, D)).

    Block terms are computed once per distinct (observation, block) pair and
    shared across rows.
    """
    from ..partition import labels_to_masks

    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    labels = np.atleast_2d(labels)
    B, D = Z.shape
    G = _variograms(params, grad)
    K = G.shape[0]
    uniq, inv = np.unique(Z, axis=0, return_inverse=True)
    inv = inv.ravel()
    masks = labels_to_masks(labels)
    vals = np.zeros((K, B))
    for o in range(uniq.shape[0]):
        rows = np.flatnonzero(inv == o)
        m = masks[rows]
        need, where = np.unique(m, return_inverse=True)
        where = where.reshape(m.shape)
        table = np.zeros((K, need.size))
        nz = need != 0
        table[:, nz] = _block_terms(G, uniq[o], need[nz], params.qmc)
        V, _ = _exponent_terms(G, uniq[o], params.qmc)
        vals[:, rows] = -V[:, None] + table[:, where].sum(axis=-1)
    if not grad:
        return vals[0]
    with np.errstate(invalid="ignore"):
        return vals[0], _fd_to_natural(params, vals)


def mc_exponent_measure(params: BrownResnickParams, z, N: int, rng) -> tuple[float, float]:
    """Plain Monte-Carlo estimate of ``E[max_k W(s_k) / z_k]`` with its standard error.

    ``W(s) = exp(eps(s) - gamma_var(s) / 2)`` with ``eps`` a centred Gaussian
    process pinned at ``eps(0) = 0``, so ``Cov(eps(s), eps(t)) =
    gamma(s) + gamma(t) - gamma(s - t)``.
    """
    if N < 1000:
        raise ValueError("mc_exponent_measure needs N >= 1000")
    z = np.asarray(z, dtype=float)
    sites = params.sites
    g0 = params.semivariogram(np.sqrt((sites**2).sum(axis=1)))
    diff = sites[:, None, :] - sites[None, :, :]
    gst = params.semivariogram(np.sqrt((diff**2).sum(axis=-1)))
    cov = g0[:, None] + g0[None, :] - gst
    vals, vecs = np.linalg.eigh(cov)
    if np.min(vals) < -1e-8 * max(1.0, np.max(np.abs(vals))):
        raise NumericDomainError(f"process covariance is not positive semidefinite: {vals}")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    gen = rng.generator() if isinstance(rng, RandomStream) else rng
    eps = gen.standard_normal((N, sites.shape[0])) @ root.T
    logW = eps - g0[None, :]
    with np.errstate(divide="ignore"):
        logratio = logW - np.log(z)[None, :]
    x = np.exp(logratio.max(axis=1))
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(N))
