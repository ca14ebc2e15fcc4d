"""Set partitions, Bell numbers and the Evans-Pitman attraction (EPA) family.

Partitions are stored as restricted-growth label vectors: item ``i`` gets the
index of its block, and blocks are numbered in order of their smallest
element.  The EPA sampler allocates items in the natural order ``0..D-1``,
which produces exactly these canonical labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from .core import DomainError, RandomStream

MAX_BELL_D = 64
MAX_ENUM_D = 12


@dataclass(frozen=True)
class SetPartition:
    """A partition of ``{0, ..., D-1}`` in canonical form (0-based items)."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        if any(len(b) == 0 for b in blocks):
            raise ValueError("partition blocks must be non-empty")
        blocks = tuple(sorted(blocks, key=lambda b: b[0]))
        items = [i for b in blocks for i in b]
        if sorted(items) != list(range(len(items))):
            raise ValueError(f"blocks {blocks} do not partition 0..{len(items) - 1}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def D(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_labels(cls, labels) -> "SetPartition":
        groups: dict = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, []).append(i)
        return cls(tuple(groups.values()))

    def labels(self) -> np.ndarray:
        out = np.empty(self.D, dtype=np.int64)
        for k, b in enumerate(self.blocks):
            out[list(b)] = k
        return out

    def masks(self) -> list[int]:
        """Each block as a bitmask over items."""
        return [sum(1 << i for i in b) for b in self.blocks]

    def __str__(self) -> str:
        return "|".join(",".join(str(i + 1) for i in b) for b in self.blocks)

    @classmethod
    def parse(cls, text: str) -> "SetPartition":
        """Inverse of ``str``: ``"1,3|2"`` -> blocks {0, 2}, {1}."""
        return cls(tuple(tuple(int(v) - 1 for v in part.split(",")) for part in text.split("|")))


def bell_number(D: int) -> int:
    """Number of set partitions of ``D`` items, via the Bell triangle."""
    if not 1 <= D <= MAX_BELL_D:
        raise DomainError(f"bell_number needs 1 <= D <= {MAX_BELL_D}, got {D}")
    row = [1]
    for _ in range(D - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[-1]


def _restricted_growth_strings(D: int) -> Iterator[list[int]]:
    a = [0] * D
    b = [0] + [1] * (D - 1)  # b[i] = max(a[:i]) + 1
    yield list(a)
    if D == 1:
        return
    while True:
        i = D - 1
        while i > 0 and a[i] == b[i]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        for j in range(i + 1, D):
            a[j] = 0
            b[j] = max(b[j - 1], a[j - 1] + 1)
        yield list(a)


def enumerate_partitions(D: int) -> Iterator[SetPartition]:
    """Yield every partition of ``D`` items exactly once, in canonical form."""
    if not 1 <= D <= MAX_ENUM_D:
        raise DomainError(
            f"refusing to enumerate partitions for D={D}; only 1 <= D <= {MAX_ENUM_D} "
            f"is supported (Bell number {bell_number(D) if 1 <= D <= MAX_BELL_D else '?'})"
        )
    for labels in _restricted_growth_strings(D):
        yield SetPartition.from_labels(labels)


@lru_cache(maxsize=None)
def partition_label_array(D: int) -> np.ndarray:
    """All partitions of ``D`` items as a read-only (Bell(D), D) label array."""
    if not 1 <= D <= 10:
        raise DomainError(f"label array enumeration supports 1 <= D <= 10, got {D}")
    arr = np.array(list(_restricted_growth_strings(D)), dtype=np.int64)
    arr.setflags(write=False)
    return arr


def labels_to_masks(labels: np.ndarray) -> np.ndarray:
    """Block bitmasks for a batch of labels: shape (B, D), zero for unused slots."""
    labels = np.atleast_2d(labels)
    B, D = labels.shape
    bits = (np.int64(1) << np.arange(D, dtype=np.int64))
    onehot = labels[:, :, None] == np.arange(D)[None, None, :]
    return np.einsum("bik,i->bk", onehot.astype(np.int64), bits)


# -- EPA distribution ---------------------------------------------------------

@dataclass(frozen=True)
class EpaParams:
    """Mass ``alpha``, discount ``delta`` and similarity scale ``rho``."""

    alpha: float
    delta: float
    rho: float

    def __post_init__(self):
        a, d, r = float(self.alpha), float(self.delta), float(self.rho)
        if not (0.0 <= d < 1.0):
            raise DomainError(f"EPA discount delta must lie in [0, 1), got {d}")
        if not (a > -d) or not np.isfinite(a):
            raise DomainError(f"EPA mass alpha must exceed -delta = {-d}, got {a}")
        if not (r > 0.0) or not np.isfinite(r):
            raise DomainError(f"EPA similarity scale rho must be positive, got {r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.delta, self.rho], dtype=float)


def _as_batch(dist: np.ndarray, labels: np.ndarray):
    labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
    dist = np.asarray(dist, dtype=float)
    if dist.ndim == 2:
        dist = dist[None, :, :]
    if dist.shape[-1] != labels.shape[1] or dist.shape[-2] != labels.shape[1]:
        raise ValueError(f"distance shape {dist.shape} does not match D={labels.shape[1]}")
    return dist, labels


def epa_log_pmf_batch(params: EpaParams, dist, labels, grad: bool = False):
    """Log-pmf of a batch of label vectors under the EPA family.

    ``dist`` is either one (D, D) matrix or a (B, D, D) stack matching
    ``labels`` row by row.  With ``grad=True`` also returns the (B, 3) gradient
    with respect to ``(alpha, delta, rho)``.
    """
    dist, labels = _as_batch(dist, labels)
    alpha, delta, rho = float(params.alpha), float(params.delta), float(params.rho)
    B, D = labels.shape
    logp = np.zeros(B)
    g = np.zeros((B, 3)) if grad else None
    for t in range(1, D):
        prev = labels[:, :t]
        k = prev.max(axis=1) + 1
        c = labels[:, t]
        new = c == k
        a = -dist[:, t, :t] / rho if dist.shape[0] == B else np.broadcast_to(-dist[0, t, :t] / rho, (B, t))
        in_block = prev == c[:, None]
        a_blk = np.where(in_block, a, -np.inf)
        m_all = a.max(axis=1)
        e_all = np.exp(a - m_all[:, None])
        s_all = e_all.sum(axis=1)
        lse_all = m_all + np.log(s_all)
        m_blk = np.where(new, 0.0, a_blk.max(axis=1))
        e_blk = np.exp(a_blk - m_blk[:, None])
        s_blk = e_blk.sum(axis=1)
        with np.errstate(divide="ignore"):
            lse_blk = m_blk + np.log(s_blk)
        log_old = np.log(t - delta * k) - np.log(alpha + t) + lse_blk - lse_all
        log_new = np.log(alpha + delta * k) - np.log(alpha + t)
        logp += np.where(new, log_new, log_old)
        if grad:
            d_row = -a * rho
            mean_all = (e_all * d_row).sum(axis=1) / s_all
            with np.errstate(invalid="ignore"):
                mean_blk = (e_blk * d_row).sum(axis=1) / s_blk
            g[:, 0] += np.where(new, 1.0 / (alpha + delta * k), 0.0) - 1.0 / (alpha + t)
            g[:, 1] += np.where(new, k / (alpha + delta * k), -k / (t - delta * k))
            g[:, 2] += np.where(new, 0.0, (mean_blk - mean_all) / rho**2)
    if grad:
        return logp, g
    return logp


def epa_log_pmf(params: EpaParams, dist, partition: SetPartition) -> float:
    """Log-probability of ``partition`` under the EPA family with distances ``dist``."""
    return float(epa_log_pmf_batch(params, dist, partition.labels()[None, :])[0])


def epa_sample_labels(params: EpaParams, dist, uniforms: np.ndarray) -> np.ndarray:
    """Sequential EPA allocation driven by ``uniforms`` of shape (B, D).

    Column ``t`` of ``uniforms`` decides item ``t``; column 0 is unused since
    the first item always opens the first block.
    """
    uniforms = np.atleast_2d(uniforms)
    B, D = uniforms.shape
    dist = np.asarray(dist, dtype=float)
    if dist.ndim == 2:
        dist = np.broadcast_to(dist, (B, D, D))
    alpha, delta, rho = float(params.alpha), float(params.delta), float(params.rho)
    labels = np.zeros((B, D), dtype=np.int64)
    rows = np.arange(B)
    for t in range(1, D):
        prev = labels[:, :t]
        k = prev.max(axis=1) + 1
        a = -dist[:, t, :t] / rho
        e = np.exp(a - a.max(axis=1, keepdims=True))
        onehot = prev[:, :, None] == np.arange(t + 1)[None, None, :]
        w = np.einsum("bs,bsc->bc", e, onehot)
        probs = w * ((t - delta * k) / ((alpha + t) * e.sum(axis=1)))[:, None]
        probs[rows, k] = (alpha + delta * k) / (alpha + t)
        cdf = np.cumsum(probs, axis=1)
        u = uniforms[:, t] * cdf[:, -1]
        choice = (cdf < u[:, None]).sum(axis=1)
        labels[:, t] = np.minimum(choice, k)
    return labels


def epa_sample_batch(params: EpaParams, dist, size: int, rng):
    """Draw ``size`` partitions as labels with their log-pmf values."""
    gen = rng.generator() if isinstance(rng, RandomStream) else rng
    dist = np.asarray(dist, dtype=float)
    D = dist.shape[-1]
    labels = epa_sample_labels(params, dist, gen.random((size, D)))
    return labels, epa_log_pmf_batch(params, dist, labels)


def epa_sample(params: EpaParams, dist, rng) -> tuple[SetPartition, float]:
    """Draw one partition from the EPA family; returns it with its log-pmf."""
    gen = rng.generator() if isinstance(rng, RandomStream) else rng
    dist = np.asarray(dist, dtype=float)
    labels = epa_sample_labels(params, dist, gen.random((1, dist.shape[-1])))
    part = SetPartition.from_labels(labels[0])
    return part, epa_log_pmf(params, dist, part)
