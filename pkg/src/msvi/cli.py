"""Command-line experiment runner: simulate, fit, mle and replication sweeps.

Usage::

    msvi simulate --config cfg.toml --out results/
    msvi sweep --config configs/m_sweep.toml --threads 4 --out results/

Every CSV starts with a ``# artifact <version> config=<hash> seed=<seed>``
line.  Outputs depend only on the configuration and seed, never on the number
of worker processes.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import MODEL_PARAMS, ConfigError, ExperimentConfig, load_config
from .core import (DataValidationError, DomainError, NumericDomainError, RandomStream, SpatialDataset,
                   read_observations, read_sites, validate_dataset, write_dataset)
from .mle import MAX_BR_D, MAX_LOGISTIC_D, fit_mle
from .model.params import BrownResnickParams, LogisticParams, QmcSettings
from .partition import EpaParams
from .simulate import sample_brown_resnick, sample_logistic
from .vi import FitAborted, VIConfig, fit

log = logging.getLogger("msvi")

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 2, 3
BOOT_KEY = 2**32
# failures that a single replication may hit; they are recorded, not raised
RECOVERABLE = (FitAborted, DomainError, NumericDomainError, DataValidationError, FloatingPointError)


def provenance(cfg: ExperimentConfig) -> str:
    return f"artifact {__version__} config={cfg.digest()} seed={cfg.seed}"


def _qmc(cfg: ExperimentConfig) -> QmcSettings:
    q = cfg.section("qmc")
    default = QmcSettings()
    return QmcSettings(q.get("n_points", default.n_points), q.get("n_shifts", default.n_shifts),
                       q.get("seed", default.seed))


def _true_params(cfg: ExperimentConfig, values: dict, sites):
    if cfg.model == "logistic":
        return LogisticParams(values["theta"])
    return BrownResnickParams(values["lam"], values["nu"], sites, _qmc(cfg))


def _sites(cfg: ExperimentConfig, D: int, stream: RandomStream) -> np.ndarray:
    data = cfg.section("data")
    if "sites" in data:
        return np.asarray(data["sites"], dtype=float)
    if "sites_file" in data:
        return read_sites(cfg.resolve(data["sites_file"]))
    return stream.generator().uniform(size=(D, 2))


def simulate_dataset(cfg: ExperimentConfig, D: int, truth: dict, n: int, stream: RandomStream):
    """Sites uniform on the unit square (unless given) and ``n`` exact draws.

    Returns ``(dataset, partitions or None)``; partitions exist for Brown-Resnick only.
    """
    sites = _sites(cfg, D, stream.child(0))
    params = _true_params(cfg, truth, sites)
    if cfg.model == "logistic":
        return validate_dataset(sites, sample_logistic(params, len(sites), n, stream.child(1))), None
    Z, parts = sample_brown_resnick(params, n, stream.child(1), record_partitions=True)
    return validate_dataset(sites, Z), parts


def _data_stream(seed: int, replication: int, scenario: int) -> RandomStream:
    # the fit for replication r owns keys (r, 0, ...) and (r, 1, ...)
    return RandomStream(seed, (replication, 2, scenario))


def _single_dataset(cfg: ExperimentConfig):
    data = cfg.section("data")
    if "obs_file" in data:
        obs = read_observations(cfg.resolve(data["obs_file"]))
        D = obs.shape[1] if obs.ndim == 2 else 0
        sites = _sites(cfg, D, RandomStream(cfg.seed)) if cfg.model == "brown_resnick" or \
            "sites" in data or "sites_file" in data else np.zeros((D, 2))
        return validate_dataset(sites, obs), None
    D = data.get("D", len(data.get("sites", [])))
    return simulate_dataset(cfg, D, cfg.section("truth"), data["n"], _data_stream(cfg.seed, 0, 0))


def vi_config(cfg: ExperimentConfig, replication: int = 0, M: int | None = None) -> VIConfig:
    vi = cfg.section("vi")
    return VIConfig(
        M=M or vi["M"], R=vi["R"], lr_theta=vi["lr_theta"], lr_phi=vi["lr_phi"],
        init_model=tuple(float(x) for x in vi["init"]),
        init_epa=EpaParams(vi["init_alpha"], vi["init_delta"], vi["init_rho"]),
        seed=cfg.seed, momentum=vi["momentum"], batch_size=vi.get("batch_size"),
        distance=vi["distance"], replication=replication, qmc=_qmc(cfg))


def _run_mle(cfg: ExperimentConfig, data: SpatialDataset):
    m = cfg.section("mle")
    init = tuple(m["init"]) if "init" in m else None
    return fit_mle(cfg.model, data, init=init, xtol=m.get("xtol", 1e-6), qmc=_qmc(cfg))


def _check_mle_dims(cfg: ExperimentConfig, dims) -> None:
    limit = MAX_LOGISTIC_D if cfg.model == "logistic" else MAX_BR_D
    if max(dims) > limit:
        raise ConfigError(f"the exact likelihood for {cfg.model} supports D <= {limit}, got {max(dims)}")


def _writer(path: Path, cfg: ExperimentConfig):
    fh = open(path, "w", newline="")
    fh.write(f"# {provenance(cfg)}\n")
    return fh, csv.writer(fh)


def run_simulate(cfg: ExperimentConfig, out: Path) -> int:
    data, parts = _single_dataset(cfg)
    write_dataset(data, out / "sites.csv", out / "observations.csv", provenance(cfg))
    if parts is not None:
        fh, w = _writer(out / "partitions.csv", cfg)
        with fh:
            w.writerow(["replicate", "partition"])
            for i, p in enumerate(parts, 1):
                w.writerow([i, str(p)])
    return EXIT_OK


def run_fit(cfg: ExperimentConfig, out: Path) -> int:
    data, _ = _single_dataset(cfg)
    try:
        trace = fit(data, cfg.model, vi_config(cfg))
    except FitAborted as exc:
        log.error("%s", exc)
        exc.trace.write_csv(out / "trace.csv", provenance(cfg))
        return EXIT_ALL_FAILED
    trace.write_csv(out / "trace.csv", provenance(cfg))
    est = trace.estimate(cfg.section("vi")["tail_fraction"])
    fh, w = _writer(out / "estimate.csv", cfg)
    with fh:
        w.writerow(["param", "estimate", "final_iterate"])
        for name, e, last in zip(trace.param_names, est, trace.model[len(trace) - 1]):
            w.writerow([name, repr(float(e)), repr(float(last))])
        for name, last in zip(("alpha", "delta", "rho"), trace.epa[len(trace) - 1]):
            w.writerow([name, "", repr(float(last))])
    return EXIT_OK


def run_mle(cfg: ExperimentConfig, out: Path) -> int:
    data, _ = _single_dataset(cfg)
    _check_mle_dims(cfg, [data.D])
    res = _run_mle(cfg, data)
    names = MODEL_PARAMS[cfg.model]
    values = res.params.values() if res.params is not None else [float("nan")] * len(names)
    fh, w = _writer(out / "mle.csv", cfg)
    with fh:
        w.writerow([*names, "loglik", "n_evals", "converged"])
        w.writerow([*map(repr, map(float, values)), repr(float(res.loglik)), res.n_evals, int(res.converged)])
    return EXIT_OK if res.params is not None else EXIT_ALL_FAILED


@dataclass(frozen=True)
class Scenario:
    """One data-generating setting of a sweep."""

    index: int
    D: int
    truth: dict

    def label(self, M: int | None = None) -> str:
        parts = [f"D={self.D}", *(f"{k}={v:g}" for k, v in self.truth.items())]
        if M is not None:
            parts.append(f"M={M}")
        return " ".join(parts)


def sweep_scenarios(cfg: ExperimentConfig) -> list[Scenario]:
    sweep, truth, data = cfg.section("sweep"), cfg.section("truth"), cfg.section("data")
    dims = sweep.get("D_values") or [data.get("D", len(data.get("sites", [])))]
    names = MODEL_PARAMS[cfg.model]
    grids = [sweep.get(f"{p}_values") or [truth[p]] for p in names]
    combos = itertools.product(dims, *grids)
    return [Scenario(i, D, dict(zip(names, vals))) for i, (D, *vals) in enumerate(combos)]


def _replication_rows(cfg: ExperimentConfig, scenario: Scenario, rep: int) -> list[dict]:
    """Fit every requested estimator to one simulated dataset."""
    sweep = cfg.section("sweep")
    n = cfg.section("data")["n"]
    names = MODEL_PARAMS[cfg.model]
    base = {"D": scenario.D, "n": n, "replication": rep}
    rows = []

    def record(label, M, estimator, values, status):
        for name, v in zip(names, values):
            rows.append({**base, "scenario": label, "M": M, "estimator": estimator, "param": name,
                         "true_value": scenario.truth[name], "estimate": v, "status": status})

    try:
        data, _ = simulate_dataset(cfg, scenario.D, scenario.truth, n,
                                   _data_stream(cfg.seed, rep, scenario.index))
    except RECOVERABLE as exc:
        data, failure = None, f"failed: simulation: {exc}"
    nan = [float("nan")] * len(names)
    if "mle" in sweep["estimators"]:
        if data is None:
            record(scenario.label(), "", "mle", nan, failure)
        else:
            try:
                res = _run_mle(cfg, data)
                ok = res.params is not None
                record(scenario.label(), "", "mle", res.params.values() if ok else nan,
                       "ok" if ok else "failed: no finite likelihood")
            except RECOVERABLE as exc:
                record(scenario.label(), "", "mle", nan, f"failed: {exc}")
    if "vi" in sweep["estimators"]:
        vi = cfg.section("vi")
        for M in sweep.get("M_values") or [vi["M"]]:
            if data is None:
                record(scenario.label(M), M, "vi", nan, failure)
                continue
            try:
                trace = fit(data, cfg.model, vi_config(cfg, rep, M))
                record(scenario.label(M), M, "vi", trace.estimate(vi["tail_fraction"]), "ok")
            except RECOVERABLE as exc:
                record(scenario.label(M), M, "vi", nan, f"failed: {exc}".splitlines()[0])
    return rows


def _task(args):
    cfg, scenario, rep = args
    return _replication_rows(cfg, scenario, rep)


REPLICATION_COLUMNS = ["scenario", "D", "n", "M", "replication", "estimator", "param", "true_value",
                       "estimate", "status", "flag"]
SUMMARY_COLUMNS = ["scenario", "estimator", "param", "mean", "sd", "ci_lo", "ci_hi", "n_reps", "n_failed"]


def flag_extremes(values: np.ndarray) -> np.ndarray:
    """Mark values beyond three interquartile ranges of the quartiles (Tukey's far-out rule)."""
    flags = np.zeros(values.shape, dtype=bool)
    ok = np.isfinite(values)
    if ok.sum() >= 4:
        q1, q3 = np.percentile(values[ok], [25, 75])
        iqr = q3 - q1
        flags[ok] = (values[ok] < q1 - 3 * iqr) | (values[ok] > q3 + 3 * iqr)
    return flags


def _groups(rows: list[dict]) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["scenario"], r["estimator"], r["param"]), []).append(r)
    return groups


def summarize(rows: list[dict], seed: int, n_boot: int) -> list[dict]:
    """Mean, SD and bootstrap percentile interval of the mean per scenario/estimator/param.

    Groups are numbered in order of first appearance; group ``i`` bootstraps
    with its own stream so the result does not depend on evaluation order.
    """
    out = []
    for i, ((scen, est, param), grp) in enumerate(_groups(rows).items()):
        x = np.array([float(r["estimate"]) for r in grp if r["status"] == "ok"])
        n_failed = len(grp) - x.size
        mean = float(np.mean(x)) if x.size else float("nan")
        sd = float(np.std(x, ddof=1)) if x.size > 1 else float("nan")
        if x.size:
            gen = RandomStream(seed, (BOOT_KEY, i)).generator()
            idx = gen.integers(0, x.size, size=(n_boot, x.size))
            lo, hi = np.percentile(x[idx].mean(axis=1), [2.5, 97.5])
        else:
            lo = hi = float("nan")
        out.append({"scenario": scen, "estimator": est, "param": param, "mean": mean, "sd": sd,
                    "ci_lo": float(lo), "ci_hi": float(hi), "n_reps": int(x.size), "n_failed": n_failed})
    return out


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def run_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    sweep = cfg.section("sweep")
    scenarios = sweep_scenarios(cfg)
    if "mle" in sweep["estimators"]:
        _check_mle_dims(cfg, [s.D for s in scenarios])
    tasks = [(cfg, s, rep) for s in scenarios for rep in range(sweep["replications"])]
    log.info("sweep: %d scenarios x %d replications", len(scenarios), sweep["replications"])
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_task, tasks, chunksize=1))
    else:
        results = [_task(t) for t in tasks]
    rows = [r for res in results for r in res]
    for grp in _groups(rows).values():
        vals = np.array([float(r["estimate"]) if r["status"] == "ok" else np.nan for r in grp])
        for r, f in zip(grp, flag_extremes(vals)):
            r["flag"] = "far_out" if f else ""
    fh, w = _writer(out / "replications.csv", cfg)
    with fh:
        w.writerow(REPLICATION_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in REPLICATION_COLUMNS])
    summary = summarize(rows, cfg.seed, sweep["bootstrap"])
    fh, w = _writer(out / "summary.csv", cfg)
    with fh:
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([_fmt(s[c]) for c in SUMMARY_COLUMNS])
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d estimates failed", failed, len(rows))
    return EXIT_ALL_FAILED if rows and failed == len(rows) else EXIT_OK


def run_experiment(cfg: ExperimentConfig, out, threads: int = 1) -> int:
    """Execute ``cfg.command``, writing CSVs into ``out``; returns the exit status."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.command == "simulate":
        return run_simulate(cfg, out)
    if cfg.command == "fit":
        return run_fit(cfg, out)
    if cfg.command == "mle":
        return run_mle(cfg, out)
    return run_sweep(cfg, out, threads)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msvi", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=("simulate", "fit", "mle", "sweep"),
                   help="overrides the command named in the config")
    p.add_argument("--config", required=True, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, help="overrides the seed in the config")
    p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"--seed must lie in [0, 2^64), got {args.seed}")
            cfg = cfg.with_seed(args.seed)
        if args.command and args.command != cfg.command:
            raise ConfigError(f"command line asks for '{args.command}' but the config says '{cfg.command}'")
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        return run_experiment(cfg, args.out, args.threads)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
