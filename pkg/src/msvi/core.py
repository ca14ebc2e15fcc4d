"""Shared data model: spatial datasets, distance matrices and random streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataValidationError(ValueError):
    """Raised when observations or sites violate the dataset invariants."""


class DomainError(ValueError):
    """Raised when a parameter lies outside its admissible domain."""


class NumericDomainError(ArithmeticError):
    """Raised when a numerical routine meets an input it cannot handle."""


@dataclass(frozen=True)
class SpatialDataset:
    """Site coordinates plus replicate observations on unit-Frechet margins.

    ``sites`` has shape (D, 2) and ``observations`` has shape (n, D).
    Build instances through :func:`validate_dataset`.
    """

    sites: np.ndarray
    observations: np.ndarray

    @property
    def D(self) -> int:
        return self.observations.shape[1]

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    def subset(self, rows: Sequence[int]) -> "SpatialDataset":
        return SpatialDataset(self.sites, self.observations[np.asarray(rows)])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def validate_dataset(sites, observations) -> SpatialDataset:
    """Check raw sites/observations and wrap them in a :class:`SpatialDataset`."""
    obs_rows = [np.asarray(row, dtype=float).ravel() for row in observations]
    if len(obs_rows) == 0:
        raise DataValidationError("dataset needs at least one replicate (n >= 1)")
    site_arr = np.asarray(sites, dtype=float)
    if site_arr.ndim != 2 or site_arr.shape[1] != 2:
        raise DataValidationError(
            f"sites must be a list of planar coordinates, got shape {site_arr.shape}"
        )
    D = site_arr.shape[0]
    if D < 1:
        raise DataValidationError("dataset needs at least one site (D >= 1)")
    if not np.all(np.isfinite(site_arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(site_arr), axis=1))[0])
        raise DataValidationError(f"site {bad + 1} has a non-finite coordinate")
    for i, row in enumerate(obs_rows):
        if row.shape[0] != D:
            raise DataValidationError(
                f"replicate {i + 1} has {row.shape[0]} values but there are {D} sites"
            )
        bad = np.flatnonzero(~np.isfinite(row) | (row <= 0.0))
        if bad.size:
            j = int(bad[0])
            raise DataValidationError(
                f"replicate {i + 1}, site {j + 1}: value {row[j]!r} is not a "
                "strictly positive finite number"
            )
    return SpatialDataset(_readonly(site_arr), _readonly(np.vstack(obs_rows)))


def distance_matrix(z) -> np.ndarray:
    """Pairwise absolute differences ``|z_i - z_j|`` of one observation vector."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 1:
        raise DataValidationError("observation must be a non-empty vector")
    if not np.all(np.isfinite(z)) or np.any(z <= 0.0):
        raise DataValidationError(f"observation has non-positive or non-finite entries: {z}")
    return np.abs(z[:, None] - z[None, :])


def distance_matrices(Z: np.ndarray) -> np.ndarray:
    """Stacked :func:`distance_matrix` for every row of ``Z`` (shape (n, D, D))."""
    Z = np.asarray(Z, dtype=float)
    return np.abs(Z[:, :, None] - Z[:, None, :])


def site_distance_matrix(sites) -> np.ndarray:
    """Euclidean distances between sites; the alternative to observation distances."""
    s = np.asarray(sites, dtype=float)
    diff = s[:, None, :] - s[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class RandomStream:
    """Counter-based random stream keyed by a seed and a tuple of indices.

    Equal ``(seed, index)`` pairs always give the same sequence; different
    indices give independent streams (Philox keyed through ``SeedSequence``).
    """

    seed: int
    index: tuple = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        idx = self.index if isinstance(self.index, tuple) else (self.index,)
        if any(int(i) < 0 for i in idx):
            raise DomainError(f"stream indices must be non-negative, got {idx}")
        object.__setattr__(self, "index", tuple(int(i) for i in idx))

    def child(self, *index: int) -> "RandomStream":
        return RandomStream(self.seed, self.index + tuple(index))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.index)
        return np.random.Generator(np.random.Philox(ss))


# -- CSV I/O ---------------------------------------------------------------

def _data_rows(path: Path) -> Iterable[list[str]]:
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            yield row


def read_sites(path) -> np.ndarray:
    """Sites CSV with header ``site_x, site_y``; lines starting with ``#`` are skipped."""
    rows = list(_data_rows(Path(path)))
    header = [h.strip() for h in rows[0]] if rows else []
    if header[:2] != ["site_x", "site_y"]:
        raise DataValidationError(f"{path}: expected header 'site_x,site_y', got {header}")
    return np.array([[float(v) for v in r[:2]] for r in rows[1:]])


def read_observations(path) -> np.ndarray:
    """Observation CSV, one replicate per row; the header line is optional."""
    rows = list(_data_rows(Path(path)))
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows])


def read_dataset(sites_path, observations_path) -> SpatialDataset:
    """Read a sites CSV (``site_x, site_y``) and an observation CSV (rows = replicates)."""
    return validate_dataset(read_sites(sites_path), read_observations(observations_path))


def write_dataset(data: SpatialDataset, sites_path, observations_path, provenance: str | None = None):
    with open(sites_path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        w = csv.writer(fh)
        w.writerow(["site_x", "site_y"])
        for x, y in data.sites:
            w.writerow([repr(float(x)), repr(float(y))])
    with open(observations_path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        w = csv.writer(fh)
        w.writerow([f"s{j + 1}" for j in range(data.D)])
        for row in data.observations:
            w.writerow([repr(float(v)) for v in row])
