"""Bijections between constrained parameters and unconstrained coordinates.

    theta in (0, 1]   <- expit(u)          (u = 0 -> 0.5)
    lam > 0           <- exp(u)            (u = 0 -> 1)
    nu in (0, 2]      <- 2 * expit(u)      (u = 0 -> 1)
    delta in [0, 1)   <- expit(u)          (u = 0 -> 0.5)
    alpha > -delta    <- exp(u) - delta    (u = 0 -> 1 - delta)
    rho > 0           <- exp(u)            (u = 0 -> 1)

Boundary values (theta = 1, nu = 2, delta = 0) have no finite preimage and
are rejected by :func:`unconstrain`.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from ..core import DomainError
from ..model.params import BrownResnickParams, LogisticParams, ModelParams, QmcSettings
from ..partition import EpaParams

U_CLIP = 30.0


def _finite(u: np.ndarray, what) -> np.ndarray:
    if not np.all(np.isfinite(u)):
        raise DomainError(f"{what} sits on the boundary of its domain and has no unconstrained value")
    return u


def unconstrain_model(params: ModelParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        if isinstance(params, LogisticParams):
            u = np.array([logit(params.theta)])
        else:
            u = np.array([np.log(params.lam), logit(params.nu / 2.0)])
    return _finite(u, params)


def constrain_model(u, like: ModelParams | str, sites=None, qmc: QmcSettings | None = None) -> ModelParams:
    """Map unconstrained ``u`` back to model parameters of the kind of ``like``."""
    u = np.asarray(u, dtype=float)
    kind = like if isinstance(like, str) else like.kind
    if kind == "logistic":
        return LogisticParams(float(expit(u[0])))
    if sites is None:
        sites = like.sites
    if qmc is None:
        qmc = like.qmc if not isinstance(like, str) else QmcSettings()
    return BrownResnickParams(float(np.exp(u[0])), float(2.0 * expit(u[1])), sites, qmc)


def model_jacobian(params: ModelParams) -> np.ndarray:
    """Diagonal of d(natural)/d(unconstrained)."""
    if isinstance(params, LogisticParams):
        t = params.theta
        return np.array([t * (1.0 - t)])
    return np.array([params.lam, params.nu * (1.0 - params.nu / 2.0)])


def unconstrain_epa(params: EpaParams) -> np.ndarray:
    a, d, r = params.alpha, params.delta, params.rho
    with np.errstate(divide="ignore"):
        u = np.array([np.log(a + d), logit(d), np.log(r)])
    return _finite(u, params)


def constrain_epa(u) -> EpaParams:
    u = np.asarray(u, dtype=float)
    d = float(expit(u[1]))
    return EpaParams(float(np.exp(u[0]) - d), d, float(np.exp(u[2])))


def epa_grad_to_unconstrained(params: EpaParams, g) -> np.ndarray:
    """Chain rule: gradient w.r.t. (alpha, delta, rho) -> w.r.t. the u coordinates."""
    g = np.asarray(g, dtype=float)
    a, d, r = params.alpha, params.delta, params.rho
    dd = d * (1.0 - d)
    return np.stack([g[..., 0] * (a + d), (g[..., 1] - g[..., 0]) * dd, g[..., 2] * r], axis=-1)
