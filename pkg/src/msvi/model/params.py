from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..core import DomainError


@dataclass(frozen=True)
class LogisticParams:
    """Logistic dependence ``theta`` in (0, 1]; ``theta = 1`` is independence."""

    theta: float

    def __post_init__(self):
        if not (0.0 < float(self.theta) <= 1.0):
            raise DomainError(f"logistic theta must lie in (0, 1], got {self.theta}")

    kind = "logistic"
    names = ("theta",)

    def values(self) -> np.ndarray:
        return np.array([self.theta], dtype=float)

    def replace(self, values) -> "LogisticParams":
        return LogisticParams(float(values[0]))


@dataclass(frozen=True)
class QmcSettings:
    """Fixed QMC budget used inside Brown-Resnick likelihood evaluations.

    The shifts are drawn once from ``seed``, so the approximate likelihood is a
    deterministic, smooth function of the parameters.
    """

    n_points: int = 128
    n_shifts: int = 8
    seed: int = 20_221_108


@dataclass(frozen=True)
class BrownResnickParams:
    """Range ``lam`` > 0 and smoothness ``nu`` in (0, 2] of the power semivariogram.

    ``gamma(h) = (|h| / lam) ** nu``; the process variance at ``s`` is
    ``2 * gamma(s)``.
    """

    lam: float
    nu: float
    sites: np.ndarray = field(compare=False, repr=False)
    qmc: QmcSettings = field(default=QmcSettings(), compare=False, repr=False)

    def __post_init__(self):
        if not (float(self.lam) > 0.0 and np.isfinite(self.lam)):
            raise DomainError(f"Brown-Resnick range lam must be positive, got {self.lam}")
        if not (0.0 < float(self.nu) <= 2.0):
            raise DomainError(f"Brown-Resnick smoothness nu must lie in (0, 2], got {self.nu}")
        s = np.asarray(self.sites, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2:
            raise DomainError(f"sites must have shape (D, 2), got {s.shape}")
        object.__setattr__(self, "sites", s)

    kind = "brown_resnick"
    names = ("lam", "nu")

    def values(self) -> np.ndarray:
        return np.array([self.lam, self.nu], dtype=float)

    def replace(self, values) -> "BrownResnickParams":
        return BrownResnickParams(float(values[0]), float(values[1]), self.sites, self.qmc)

    def semivariogram(self, h):
        return (np.asarray(h, dtype=float) / self.lam) ** self.nu

    def variogram_matrix(self) -> np.ndarray:
        """``2 * gamma(s_i - s_j)``: the variance of increments between sites."""
        diff = self.sites[:, None, :] - self.sites[None, :, :]
        return 2.0 * self.semivariogram(np.sqrt(np.sum(diff * diff, axis=-1)))


ModelParams = Union[LogisticParams, BrownResnickParams]
