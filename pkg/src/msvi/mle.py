"""Maximum-likelihood baselines computed from the exact full likelihood."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .core import DomainError, SpatialDataset
from .model import full_loglik_enum, logistic
from .model.params import BrownResnickParams, LogisticParams, ModelParams, QmcSettings

log = logging.getLogger(__name__)

MAX_LOGISTIC_D = 60
MAX_BR_D = 7
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MleResult:
    params: ModelParams | None
    loglik: float
    n_evals: int
    converged: bool


def logistic_full_loglik(params: LogisticParams, data: SpatialDataset) -> float:
    """Exact logistic log-likelihood summed over replicates (no partition enumeration)."""
    if data.D > MAX_LOGISTIC_D:
        raise DomainError(f"logistic full likelihood supports D <= {MAX_LOGISTIC_D}, got {data.D}")
    return float(np.sum(logistic.full_loglik(params, data.observations)))


def brown_resnick_full_loglik(params: BrownResnickParams, data: SpatialDataset) -> float:
    """Enumerated Brown-Resnick log-likelihood summed over replicates."""
    if data.D > MAX_BR_D:
        raise DomainError(f"Brown-Resnick enumerated likelihood supports D <= {MAX_BR_D}, got {data.D}")
    return float(sum(full_loglik_enum(params, z) for z in data.observations))


def golden_section_max(f, lo: float, hi: float, xtol: float = 1e-6, max_iter: int = 500):
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x), n_evals, converged)``."""
    a, b = float(lo), float(hi)
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while b - a > xtol and n < max_iter:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        n += 1
    # endpoints are admissible, check them too
    cands = [(fc, c), (fd, d), (f(lo), lo), (f(hi), hi)]
    n += 2
    fx, x = max(cands, key=lambda t: (t[0] if np.isfinite(t[0]) else -np.inf))
    return x, fx, n, b - a <= xtol


def nelder_mead_max(f, x0, xtol: float = 1e-6, max_evals: int = 2000):
    """Maximize ``f`` over R^k with Nelder-Mead; returns ``(x, f(x), n_evals, converged)``."""
    def neg(x):
        v = f(x)
        return -v if np.isfinite(v) else np.inf

    res = minimize(neg, np.asarray(x0, dtype=float), method="Nelder-Mead",
                   options={"xatol": xtol, "fatol": 1e-10, "maxfev": max_evals})
    return res.x, -res.fun, res.nfev, bool(res.success)


def fit_mle(kind: str, data: SpatialDataset, bounds=None, init=None, xtol: float = 1e-6,
            qmc: QmcSettings = QmcSettings()) -> MleResult:
    """Maximize the exact log-likelihood by derivative-free search.

    Logistic: golden-section search for theta on ``bounds`` (default
    ``(1e-3, 1)``).  Brown-Resnick: Nelder-Mead in ``(log lam, logit(nu / 2))``
    started from ``init`` (default ``(1, 1)``).
    """
    if kind == "logistic":
        lo, hi = bounds or (1e-3, 1.0)
        if not 0.0 < lo < hi <= 1.0:
            raise DomainError(f"logistic bounds must satisfy 0 < lo < hi <= 1, got {(lo, hi)}")
        obj = lambda t: logistic_full_loglik(LogisticParams(t), data)
        x, fx, n, conv = golden_section_max(obj, lo, hi, xtol)
        if not np.isfinite(fx):
            return MleResult(None, float(fx), n, False)
        return MleResult(LogisticParams(x), float(fx), n, conv)
    if kind == "brown_resnick":
        lam0, nu0 = init or (1.0, 1.0)
        build = lambda u: BrownResnickParams(float(np.exp(u[0])), float(2.0 * expit(u[1])), data.sites, qmc)
        obj = lambda u: brown_resnick_full_loglik(build(u), data)
        x, fx, n, conv = nelder_mead_max(obj, [np.log(lam0), logit(nu0 / 2.0)], xtol)
        if not np.isfinite(fx):
            return MleResult(None, float(fx), n, False)
        return MleResult(build(x), float(fx), n, conv)
    raise DomainError(f"unknown model kind {kind!r}")
