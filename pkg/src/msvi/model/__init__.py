"""Max-stable models: exponent measures, block derivatives and likelihoods.

Every function dispatches on the parameter type, so the inference code only
ever sees :data:`ModelParams`.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from ..core import DomainError, NumericDomainError
from ..partition import (SetPartition, bell_number, labels_to_masks,
                         partition_label_array)
from . import brown_resnick, logistic
from .params import BrownResnickParams, LogisticParams, ModelParams, QmcSettings

MAX_ENUM_LIKELIHOOD_D = 10

__all__ = [
    "BrownResnickParams", "LogisticParams", "ModelParams", "QmcSettings",
    "exponent_measure", "log_neg_vtau", "log_neg_vtau_masks", "st_loglik",
    "st_loglik_batch", "full_loglik_enum", "mc_exponent_measure", "model_module",
]


def model_module(params: ModelParams):
    if isinstance(params, LogisticParams):
        return logistic
    if isinstance(params, BrownResnickParams):
        return brown_resnick
    raise TypeError(f"unknown model parameters {params!r}")


def exponent_measure(params: ModelParams, z) -> float:
    """``V(z)``; coordinates at ``+inf`` drop out (marginal constraint)."""
    z = np.asarray(z, dtype=float)
    if np.any(np.isnan(z)) or np.any(z <= 0):
        raise DomainError(f"exponent measure needs strictly positive z, got {z}")
    return model_module(params).exponent_measure(params, z)


def _as_mask(tau, D: int) -> int:
    if isinstance(tau, (int, np.integer)):
        mask = int(tau)
    else:
        items = list(tau)
        if not items or any(not 0 <= int(i) < D for i in items):
            raise DomainError(f"block {items} is not a non-empty subset of 0..{D - 1}")
        mask = sum(1 << int(i) for i in set(items))
    if not 0 < mask < (1 << D):
        raise DomainError(f"block mask {mask} is not a non-empty subset of {D} sites")
    return mask


def log_neg_vtau_masks(params: ModelParams, z, masks, grad: bool = False):
    return model_module(params).log_neg_vtau_masks(params, z, masks, grad=grad)


def log_neg_vtau(params: ModelParams, z, tau: Iterable[int]) -> float:
    """``log(-d^|tau| V / dz_tau)`` at ``z`` for the 0-based index set ``tau``.

    Returns ``-inf`` when the derivative vanishes identically (e.g. a joint
    block under independence).
    """
    z = np.asarray(z, dtype=float)
    mask = _as_mask(tau, z.size)
    val = float(log_neg_vtau_masks(params, z, np.array([mask]))[0])
    if np.isnan(val):
        raise NumericDomainError(f"block derivative for tau={tau} at z={z} is not a number")
    return val


def st_loglik_batch(params: ModelParams, Z, labels, grad: bool = False):
    return model_module(params).st_loglik_batch(params, Z, labels, grad=grad)


def st_loglik(params: ModelParams, z, partition: SetPartition) -> float:
    """Joint log-density of an observation and a partition of its sites."""
    z = np.asarray(z, dtype=float)
    if partition.D != z.size:
        raise DomainError(f"partition covers {partition.D} items but z has {z.size}")
    return float(st_loglik_batch(params, z[None, :], partition.labels()[None, :])[0])


def full_loglik_enum(params: ModelParams, z) -> float:
    """Full log-likelihood of one observation by summing over every partition."""
    z = np.asarray(z, dtype=float)
    D = z.size
    if D > MAX_ENUM_LIKELIHOOD_D:
        raise DomainError(
            f"full likelihood by enumeration is limited to D <= {MAX_ENUM_LIKELIHOOD_D}; "
            f"D={D} would need {bell_number(D)} partition terms"
        )
    all_masks = np.arange(1, 1 << D, dtype=np.int64)
    table = np.zeros(1 << D)
    table[1:] = log_neg_vtau_masks(params, z, all_masks)
    masks = labels_to_masks(partition_label_array(D))
    V = exponent_measure(params, z)
    terms = table[masks].sum(axis=1)
    return float(-V + logsumexp(terms))


def mc_exponent_measure(params: BrownResnickParams, z, N: int, rng):
    return brown_resnick.mc_exponent_measure(params, z, N, rng)
