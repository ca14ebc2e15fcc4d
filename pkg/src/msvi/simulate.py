"""Exact simulation of logistic and Brown-Resnick max-stable vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, NumericDomainError, RandomStream
from .model.params import BrownResnickParams, LogisticParams, ModelParams
from .partition import SetPartition


def _gen(rng) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RandomStream) else rng


def positive_stable(theta: float, size, gen: np.random.Generator) -> np.ndarray:
    """Positive stable variates with Laplace transform ``exp(-t ** theta)`` (Kanter)."""
    if theta == 1.0:
        return np.ones(size)
    u = gen.uniform(0.0, np.pi, size)
    e = gen.standard_exponential(size)
    return (np.sin(theta * u) / np.sin(u) ** (1.0 / theta)
            * (np.sin((1.0 - theta) * u) / e) ** ((1.0 - theta) / theta))


def sample_logistic(params: LogisticParams, D: int, n: int, rng) -> np.ndarray:
    """``n`` draws of the D-variate logistic distribution, shape (n, D).

    With ``S`` positive stable and ``E_i`` i.i.d. standard exponentials,
    ``Z_i = (S / E_i) ** theta`` has joint CDF ``exp(-V(z))``.
    """
    if D < 1 or n < 1:
        raise DomainError(f"need D >= 1 and n >= 1, got D={D}, n={n}")
    gen = _gen(rng)
    theta = float(params.theta)
    S = positive_stable(theta, n, gen)
    E = gen.standard_exponential((n, D))
    return (S[:, None] / E) ** theta


class _ExtremalSampler:
    """Extremal-functions sampler for Brown-Resnick vectors.

    Under the measure tilted at site ``k`` the spectral function is
    ``Y_j = exp(eps_j - eps_k - G[j, k] / 2)`` with covariance
    ``(G[j, k] + G[l, k] - G[j, l]) / 2`` for the log-increments.
    """

    def __init__(self, params: BrownResnickParams):
        G = params.variogram_matrix()
        D = G.shape[0]
        self.D = D
        self.factors = []
        for k in range(D):
            cov = 0.5 * (G[:, k][:, None] + G[:, k][None, :] - G)
            vals, vecs = np.linalg.eigh(cov)
            if np.min(vals) < -1e-8 * max(1.0, np.max(np.abs(vals))):
                raise NumericDomainError(f"increment covariance at site {k} is not PSD")
            self.factors.append((vecs * np.sqrt(np.clip(vals, 0.0, None)), -0.5 * G[:, k]))

    def spectral(self, k: int, gen) -> np.ndarray:
        root, mean = self.factors[k]
        y = np.exp(mean + root @ gen.standard_normal(self.D))
        y[k] = 1.0
        return y

    def draw(self, gen) -> tuple[np.ndarray, np.ndarray]:
        D = self.D
        Z = np.zeros(D)
        event = np.full(D, -1, dtype=np.int64)
        n_events = 0
        for k in range(D):
            gamma = gen.standard_exponential()
            zeta = 1.0 / gamma
            while zeta > Z[k]:
                y = zeta * self.spectral(k, gen)
                if k == 0 or np.all(y[:k] < Z[:k]):
                    win = y > Z
                    Z = np.where(win, y, Z)
                    event[win] = n_events
                    n_events += 1
                gamma += gen.standard_exponential()
                zeta = 1.0 / gamma
        return Z, event


def sample_brown_resnick(params: BrownResnickParams, n: int, rng, record_partitions: bool = False):
    """``n`` exact Brown-Resnick draws at ``params.sites``, shape (n, D).

    With ``record_partitions`` also returns, for every replicate, the partition
    of sites grouped by the spectral function attaining the maximum.
    """
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    gen = _gen(rng)
    sampler = _ExtremalSampler(params)
    out = np.empty((n, sampler.D))
    parts = []
    for i in range(n):
        out[i], event = sampler.draw(gen)
        if record_partitions:
            parts.append(empirical_partition(event))
    if record_partitions:
        return out, parts
    return out


def empirical_partition(event_ids) -> SetPartition:
    """Group sites sharing a winning event id into blocks."""
    return SetPartition.from_labels(list(event_ids))


@dataclass(frozen=True)
class SimulationRequest:
    params: ModelParams
    D: int
    n: int
    seed: int
    record_partitions: bool = False


def simulate(request: SimulationRequest):
    """Run a :class:`SimulationRequest`; returns ``(observations, partitions or None)``."""
    rng = RandomStream(request.seed, (0,))
    if isinstance(request.params, LogisticParams):
        return sample_logistic(request.params, request.D, request.n, rng), None
    if request.record_partitions:
        return sample_brown_resnick(request.params, request.n, rng, True)
    return sample_brown_resnick(request.params, request.n, rng), None
