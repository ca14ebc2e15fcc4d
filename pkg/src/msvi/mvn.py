"""Multivariate normal orthant probabilities by randomized lattice QMC (Genz).

The integrand is Genz's separation-of-variables transform of
``P(X <= b)``, ``X ~ N(0, R)``, evaluated on Richtmyer lattice points with
random shifts and the periodizing (baker's) transform.  The error estimate is
three standard errors over the shifts.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .core import NumericDomainError, RandomStream

MAX_DIM = 40
PSD_TOL = 1e-10


def std_normal_cdf(x):
    """Standard normal CDF, accurate to double precision over the real line."""
    return special.ndtr(x)


@dataclass(frozen=True)
class MvnProblem:
    upper: np.ndarray
    correlation: np.ndarray
    accuracy: float = 1e-4
    max_points: int = 10_000
    n_shifts: int = 12


@lru_cache(maxsize=None)
def _richtmyer(dim: int) -> np.ndarray:
    primes = []
    cand = 2
    while len(primes) < dim:
        if all(cand % p for p in primes if p * p <= cand):
            primes.append(cand)
        cand += 1
    return np.sqrt(np.array(primes, dtype=float))


def lattice_points(n_points: int, dim: int, shifts: np.ndarray, start: int = 1) -> np.ndarray:
    """Shifted Richtmyer points with the baker's transform, shape (S, N, dim)."""
    i = np.arange(start, start + n_points, dtype=float)
    base = np.outer(i, _richtmyer(dim))
    x = np.mod(base[None, :, :] + shifts[:, None, :], 1.0)
    return np.abs(2.0 * x - 1.0)


def genz_integrand(upper: np.ndarray, chol: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Evaluate Genz's transformed integrand for a stack of problems.

    ``upper`` is (P, d), ``chol`` is (P, d, d) lower triangular with positive
    diagonal, ``w`` is (..., d-1) points in the unit cube.  Returns (P, ...).
    """
    P, d = upper.shape
    extra = w.shape[:-1]
    shape = (P,) + (1,) * len(extra)
    e = special.ndtr(upper[:, 0] / chol[:, 0, 0]).reshape(shape)
    f = np.broadcast_to(e, (P,) + extra).copy()
    ys = []
    for i in range(1, d):
        arg = np.clip(w[..., i - 1] * e, 1e-300, 1.0 - 1e-16)
        ys.append(special.ndtri(arg))
        s = 0.0
        for j in range(i):
            s = s + chol[:, i, j].reshape(shape) * ys[j]
        e = special.ndtr((upper[:, i].reshape(shape) - s) / chol[:, i, i].reshape(shape))
        f = f * e
    return f


def robust_cholesky(corr: np.ndarray) -> np.ndarray:
    """Batched Cholesky tolerating tiny negative eigenvalues (<= PSD_TOL)."""
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        pass
    vals = np.linalg.eigvalsh(corr)
    if np.min(vals) < -PSD_TOL:
        raise NumericDomainError(
            f"correlation matrix is not positive semidefinite (min eigenvalue {np.min(vals):.3g})"
        )
    d = corr.shape[-1]
    jitter = 1e-12
    while jitter < 1e-6:
        try:
            return np.linalg.cholesky(corr + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter *= 10
    raise NumericDomainError("Cholesky factorization failed after jitter")


def mvn_cdf_batch(upper: np.ndarray, corr: np.ndarray, shifts: np.ndarray, n_points: int):
    """Fixed-budget QMC probabilities for a stack of problems sharing QMC points.

    Returns ``(prob, err)`` arrays of shape (P,).  With fixed ``shifts`` the
    estimate is a smooth deterministic function of ``upper`` and ``corr``.
    """
    upper = np.asarray(upper, dtype=float)
    P, d = upper.shape
    if d == 0:
        return np.ones(P), np.zeros(P)
    if d == 1:
        return special.ndtr(upper[:, 0]), np.zeros(P)
    chol = robust_cholesky(corr)
    w = lattice_points(n_points, d - 1, shifts[:, : d - 1])
    f = genz_integrand(upper, chol, w)
    means = f.mean(axis=-1)
    S = shifts.shape[0]
    prob = means.mean(axis=1)
    err = 3.0 * means.std(axis=1, ddof=1) / np.sqrt(S) if S > 1 else np.full(P, np.inf)
    return prob, err


def _validate(problem: MvnProblem):
    b = np.asarray(problem.upper, dtype=float).ravel()
    R = np.asarray(problem.correlation, dtype=float)
    d = b.size
    if R.shape != (d, d):
        raise ValueError(f"correlation shape {R.shape} does not match {d} limits")
    if d > MAX_DIM:
        raise ValueError(f"dimension {d} exceeds the supported maximum {MAX_DIM}")
    if np.any(np.isnan(b)):
        raise ValueError("upper limits contain NaN")
    if d and (not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-12)):
        raise NumericDomainError("correlation must be symmetric with unit diagonal")
    if d and np.min(np.linalg.eigvalsh(R)) < -PSD_TOL:
        raise NumericDomainError("correlation matrix is not positive semidefinite")
    return b, R


def mvn_cdf(problem: MvnProblem, rng: RandomStream) -> tuple[float, float]:
    """``P(X <= upper)`` for ``X ~ N(0, correlation)`` with an error estimate.

    Limits at ``+inf`` are marginalized out exactly, the remaining variables
    are sorted by limit, and lattice points are added until the error estimate
    drops below ``problem.accuracy`` or ``problem.max_points`` per shift is
    reached.  Deterministic for a given ``rng``.
    """
    b, R = _validate(problem)
    if np.any(b == -np.inf):
        return 0.0, 0.0
    keep = np.flatnonzero(np.isfinite(b))
    b, R = b[keep], R[np.ix_(keep, keep)]
    d = b.size
    if d == 0:
        return 1.0, 0.0
    if d == 1:
        return float(special.ndtr(b[0])), 0.0
    order = np.argsort(b, kind="stable")
    b, R = b[order], R[np.ix_(order, order)]
    chol = robust_cholesky(R)
    gen = rng.generator() if isinstance(rng, RandomStream) else rng
    S = int(problem.n_shifts)
    shifts = gen.random((S, d - 1))
    sums = np.zeros(S)
    n_done = 0
    n_next = min(int(problem.max_points), 256)
    while True:
        w = lattice_points(n_next - n_done, d - 1, shifts, start=n_done + 1)
        sums += genz_integrand(b[None, :], chol[None], w)[0].sum(axis=-1)
        n_done = n_next
        means = sums / n_done
        prob = float(means.mean())
        err = float(3.0 * means.std(ddof=1) / np.sqrt(S))
        if err <= problem.accuracy or n_done >= problem.max_points:
            break
        n_next = min(2 * n_done, int(problem.max_points))
    return min(max(prob, 0.0), 1.0), err
