"""Stochastic gradient ascent on the importance-weighted bound."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import DomainError, RandomStream, SpatialDataset
from ..model.params import BrownResnickParams, LogisticParams, QmcSettings
from ..partition import EpaParams
from .estimators import batch_terms, observation_distances
from .transforms import (U_CLIP, constrain_epa, constrain_model, epa_grad_to_unconstrained,
                         model_jacobian, unconstrain_epa, unconstrain_model)

log = logging.getLogger(__name__)

MODEL_KINDS = {"logistic": ("theta",), "brown_resnick": ("lam", "nu")}


class FitAborted(RuntimeError):
    """Too many iterations produced non-finite gradients."""

    def __init__(self, message: str, trace: "FitTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class VIConfig:
    """Optimizer settings.  Learning rates have no defaults on purpose."""

    M: int
    R: int
    lr_theta: float
    lr_phi: float
    init_model: tuple
    init_epa: EpaParams
    seed: int
    momentum: float = 0.9
    batch_size: int | None = None
    distance: str = "observation"
    replication: int = 0
    qmc: QmcSettings = QmcSettings()
    record_time: bool = False

    def __post_init__(self):
        if self.M < 1:
            raise DomainError(f"M must be >= 1, got {self.M}")
        if self.R < 1:
            raise DomainError(f"R must be >= 1, got {self.R}")
        if not (self.lr_theta >= 0 and self.lr_phi >= 0):
            raise DomainError("learning rates must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class FitTrace:
    kind: str
    param_names: tuple
    model: np.ndarray  # (R, p), parameters after each update
    epa: np.ndarray  # (R, 3)
    iwae: np.ndarray  # (R,), batch bound at the pre-update parameters
    grad_norm_theta: np.ndarray
    grad_norm_phi: np.ndarray
    skipped: np.ndarray  # (R,), cumulative count of skipped iterations
    wall_ms: np.ndarray
    n_iter: int = field(default=0)

    @classmethod
    def empty(cls, kind: str, R: int) -> "FitTrace":
        p = len(MODEL_KINDS[kind])
        nan = lambda *s: np.full(s, np.nan)
        return cls(kind, MODEL_KINDS[kind], nan(R, p), nan(R, 3), nan(R), nan(R), nan(R),
                   np.zeros(R, dtype=np.int64), np.zeros(R))

    def __len__(self) -> int:
        return self.n_iter

    def final(self, tail: int = 1) -> np.ndarray:
        """Mean of the last ``tail`` model-parameter iterates."""
        return self.model[max(self.n_iter - tail, 0): self.n_iter].mean(axis=0)

    def estimate(self, tail_fraction: float = 0.2) -> np.ndarray:
        """Point estimate: the average over the final ``tail_fraction`` of iterations."""
        if not 0.0 < tail_fraction <= 1.0:
            raise DomainError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
        return self.final(max(1, int(round(tail_fraction * self.n_iter))))

    def write_csv(self, path, provenance: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            w = csv.writer(fh)
            w.writerow(["iter", *self.param_names, "alpha", "delta", "rho", "iwae",
                        "grad_norm_theta", "grad_norm_phi", "skipped", "wall_ms"])
            for r in range(self.n_iter):
                w.writerow([r + 1, *map(repr, map(float, self.model[r])),
                            *map(repr, map(float, self.epa[r])), repr(float(self.iwae[r])),
                            repr(float(self.grad_norm_theta[r])), repr(float(self.grad_norm_phi[r])),
                            int(self.skipped[r]), f"{self.wall_ms[r]:.3f}"])


def _batches(n: int, b: int, stream: RandomStream):
    """Yield mini-batches: shuffle once per epoch, then take consecutive slices."""
    per_epoch = n // b
    epoch = 0
    while True:
        perm = stream.child(epoch).generator().permutation(n)
        for j in range(per_epoch):
            yield np.sort(perm[j * b:(j + 1) * b])
        epoch += 1


def fit(data: SpatialDataset, kind: str, config: VIConfig) -> FitTrace:
    """Maximize the summed bound over model and EPA parameters.

    Each iteration draws a mini-batch (without replacement within an epoch),
    scales the summed per-observation gradients by ``n / batch``, applies
    momentum SGA to the model and plain SGA to the EPA parameters, both in
    unconstrained coordinates.
    """
    if kind not in MODEL_KINDS:
        raise DomainError(f"unknown model kind {kind!r}")
    if len(config.init_model) != len(MODEL_KINDS[kind]):
        raise DomainError(f"{kind} needs initial values for {MODEL_KINDS[kind]}")
    n, D = data.n, data.D
    b = config.batch_size or n
    if b > n:
        raise DomainError(f"batch size {b} exceeds n = {n}")
    if kind == "logistic":
        model = LogisticParams(*config.init_model)
    else:
        model = BrownResnickParams(*config.init_model, data.sites, config.qmc)
    u_model = unconstrain_model(model)
    u_epa = unconstrain_epa(config.init_epa)
    epa = config.init_epa
    velocity = np.zeros_like(u_model)
    Z = data.observations
    dists = observation_distances(Z, data.sites, config.distance)
    root = RandomStream(config.seed, (config.replication,))
    batches = _batches(n, b, root.child(0))
    trace = FitTrace.empty(kind, config.R)
    skipped = 0
    scale = n / b
    for r in range(config.R):
        t0 = time.perf_counter()
        rows = next(batches)
        u = root.child(1, r).generator().random((b, config.M, D))
        terms = batch_terms(model, epa, Z[rows], dists[rows], u)
        g_model = scale * (terms.grad_model * model_jacobian(model)).sum(axis=0)
        g_epa = scale * epa_grad_to_unconstrained(epa, terms.grad_epa).sum(axis=0)
        ok = np.all(np.isfinite(g_model)) and np.all(np.isfinite(g_epa))
        if ok:
            velocity = config.momentum * velocity + config.lr_theta * g_model
            u_model = np.clip(u_model + velocity, -U_CLIP, U_CLIP)
            u_epa = np.clip(u_epa + config.lr_phi * g_epa, -U_CLIP, U_CLIP)
            model = constrain_model(u_model, model)
            epa = constrain_epa(u_epa)
        else:
            skipped += 1
        trace.model[r] = model.values()
        trace.epa[r] = epa.as_array()
        trace.iwae[r] = terms.iwae.sum() * scale
        trace.grad_norm_theta[r] = np.linalg.norm(g_model)
        trace.grad_norm_phi[r] = np.linalg.norm(g_epa)
        trace.skipped[r] = skipped
        trace.wall_ms[r] = 1e3 * (time.perf_counter() - t0) if config.record_time else 0.0
        trace.n_iter = r + 1
        if skipped > 0.1 * config.R:
            raise FitAborted(
                f"aborted at iteration {r + 1}: {skipped} of {r + 1} iterations had non-finite "
                f"gradients (model={model}, epa={epa})", trace)
    if skipped:
        log.info("fit finished with %d skipped iterations", skipped)
    return trace
