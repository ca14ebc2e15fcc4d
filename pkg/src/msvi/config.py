"""Experiment configuration: flat TOML sections with strict validation.

Example::

    command = "fit"
    model = "logistic"
    seed = 1

    [truth]
    theta = 0.9

    [data]
    D = 10
    n = 20

    [vi]
    M = 25
    R = 5000
    lr_theta = 1e-4
    lr_phi = 1e-5
    init = [0.6]

Unknown keys, wrong types and out-of-range values raise :class:`ConfigError`
naming the key and its line.  Defaults that get filled in are logged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

COMMANDS = ("simulate", "fit", "mle", "sweep")
MODELS = ("logistic", "brown_resnick")
MODEL_PARAMS = {"logistic": ("theta",), "brown_resnick": ("lam", "nu")}
REQUIRED = object()


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _pos(v):
    return v > 0


def _num_list(v):
    return isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)


def _int_list(v):
    return isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v)


# key -> (type, default, check, description of the valid range)
_SCHEMA = {
    "": {
        "command": (str, REQUIRED, lambda v: v in COMMANDS, f"one of {COMMANDS}"),
        "model": (str, REQUIRED, lambda v: v in MODELS, f"one of {MODELS}"),
        "seed": (int, 0, lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
    },
    "truth": {
        "theta": (float, None, lambda v: 0 < v <= 1, "in (0, 1]"),
        "lam": (float, None, _pos, "> 0"),
        "nu": (float, None, lambda v: 0 < v <= 2, "in (0, 2]"),
    },
    "data": {
        "D": (int, None, lambda v: v >= 1, ">= 1"),
        "n": (int, None, lambda v: v >= 1, ">= 1"),
        "sites": (list, None, lambda v: all(_num_list(r) and len(r) == 2 for r in v), "a list of [x, y] pairs"),
        "sites_file": (str, None, None, ""),
        "obs_file": (str, None, None, ""),
    },
    "vi": {
        "M": (int, REQUIRED, lambda v: v >= 1, ">= 1"),
        "R": (int, REQUIRED, lambda v: v >= 1, ">= 1"),
        "lr_theta": (float, REQUIRED, _pos, "> 0"),
        "lr_phi": (float, REQUIRED, _pos, "> 0"),
        "init": (list, REQUIRED, _num_list, "a list of numbers"),
        "momentum": (float, 0.9, lambda v: 0 <= v < 1, "in [0, 1)"),
        "batch_size": (int, None, lambda v: v >= 1, ">= 1"),
        "distance": (str, "observation", lambda v: v in ("observation", "euclidean"),
                     "'observation' or 'euclidean'"),
        "init_alpha": (float, 5.0, None, ""),
        "init_delta": (float, 0.5, lambda v: 0 <= v < 1, "in [0, 1)"),
        "init_rho": (float, 1.0, _pos, "> 0"),
        "tail_fraction": (float, 0.2, lambda v: 0 < v <= 1, "in (0, 1]"),
    },
    "qmc": {
        "n_points": (int, 128, lambda v: v >= 1, ">= 1"),
        "n_shifts": (int, 8, lambda v: v >= 2, ">= 2"),
        "seed": (int, 20_221_108, lambda v: v >= 0, ">= 0"),
    },
    "mle": {
        "xtol": (float, 1e-6, _pos, "> 0"),
        "init": (list, None, _num_list, "a list of numbers"),
    },
    "sweep": {
        "replications": (int, REQUIRED, lambda v: v >= 1, ">= 1"),
        "M_values": (list, None, lambda v: _int_list(v) and v and min(v) >= 1, "a list of integers >= 1"),
        "D_values": (list, None, lambda v: _int_list(v) and v and min(v) >= 1, "a list of integers >= 1"),
        "theta_values": (list, None, lambda v: _num_list(v) and all(0 < x <= 1 for x in v), "values in (0, 1]"),
        "lam_values": (list, None, lambda v: _num_list(v) and all(x > 0 for x in v), "values > 0"),
        "nu_values": (list, None, lambda v: _num_list(v) and all(0 < x <= 2 for x in v), "values in (0, 2]"),
        "estimators": (list, ["vi", "mle"], lambda v: v and set(v) <= {"vi", "mle"}, "a subset of ['vi', 'mle']"),
        "bootstrap": (int, 10_000, lambda v: v >= 1, ">= 1"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration.  ``sections`` holds every key, defaults included."""

    command: str
    model: str
    seed: int
    sections: dict = field(repr=False)
    base_dir: Path = Path(".")

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    @property
    def has_vi(self) -> bool:
        return "vi" in self.sections

    def with_seed(self, seed: int) -> "ExperimentConfig":
        secs = dict(self.sections)
        secs[""] = {**secs[""], "seed": seed}
        return ExperimentConfig(self.command, self.model, seed, secs, self.base_dir)

    def canonical(self) -> str:
        return json.dumps(self.sections, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """Short hash of the resolved configuration (defaults and seed included)."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _line_of(text: str, section: str, key: str) -> int | None:
    current = ""
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", s)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^[\"']?{re.escape(key)}[\"']?\s*=", s):
            return no
    return None


def _where(text, section, key) -> str:
    name = f"{section}.{key}" if section else key
    no = _line_of(text, section, key)
    return f"'{name}' (line {no})" if no else f"'{name}'"


def _check_type(value, typ) -> bool:
    if typ is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if typ is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, typ)


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in raw.items() if isinstance(v, dict)}
    for name in tables:
        if name not in _SCHEMA or name == "":
            no = next((i for i, l in enumerate(text.splitlines(), 1)
                       if re.match(rf"^\s*\[\s*{re.escape(name)}\s*\]", l)), None)
            raise ConfigError(f"unknown section [{name}]" + (f" (line {no})" if no else ""))
    sections = {}
    for name, given in [("", top), *tables.items()]:
        schema = _SCHEMA[name]
        out = {}
        for key, value in given.items():
            if key not in schema:
                raise ConfigError(f"unknown key {_where(text, name, key)}")
            typ, _, check, valid = schema[key]
            if not _check_type(value, typ):
                raise ConfigError(f"{_where(text, name, key)} must be of type {typ.__name__}, got {value!r}")
            if typ is float:
                value = float(value)
            if check is not None and not check(value):
                raise ConfigError(f"{_where(text, name, key)} must be {valid}, got {value!r}")
            out[key] = value
        for key, (_, default, _, _) in schema.items():
            if key in out:
                continue
            if default is REQUIRED:
                label = f"{name}.{key}" if name else key
                raise ConfigError(f"missing required key '{label}'")
            if default is not None:
                out[key] = default
                log.info("config: %s%s = %r (default)", f"{name}." if name else "", key, default)
        sections[name] = out
    cfg = ExperimentConfig(sections[""]["command"], sections[""]["model"], sections[""]["seed"],
                           sections, base_dir)
    _check_consistency(cfg, text)
    return cfg


def _check_consistency(cfg: ExperimentConfig, text: str) -> None:
    names = MODEL_PARAMS[cfg.model]
    truth, data, vi = cfg.section("truth"), cfg.section("data"), cfg.section("vi")
    sweep = cfg.section("sweep")
    from_file = "obs_file" in data
    for key in ("sites_file", "obs_file"):
        if key in data and not cfg.resolve(data[key]).is_file():
            raise ConfigError(f"{_where(text, 'data', key)} refers to a missing file {data[key]!r}")
    if "sites" in data and "sites_file" in data:
        raise ConfigError("give either data.sites or data.sites_file, not both")
    if from_file and cfg.command in ("simulate", "sweep"):
        raise ConfigError(f"data.obs_file cannot be used with command '{cfg.command}'")
    if cfg.model == "brown_resnick" and from_file and "sites_file" not in data and "sites" not in data:
        raise ConfigError("brown_resnick data from a file also needs data.sites or data.sites_file")
    if cfg.command == "sweep":
        if "sweep" not in cfg.sections:
            raise ConfigError("command 'sweep' needs a [sweep] section")
        for p in names:
            if f"{p}_values" not in sweep and p not in truth:
                raise ConfigError(f"sweep needs truth.{p} or sweep.{p}_values")
        if "vi" in sweep["estimators"] and not cfg.has_vi:
            raise ConfigError("sweep with the 'vi' estimator needs a [vi] section")
    elif not from_file:
        missing = [p for p in names if p not in truth]
        if missing:
            raise ConfigError(f"simulated data needs truth.{', truth.'.join(missing)}")
    if not from_file:
        if "n" not in data:
            raise ConfigError("simulated data needs data.n")
        if "D" not in data and "sites" not in data and "sites_file" not in data \
                and not (cfg.command == "sweep" and "D_values" in sweep):
            raise ConfigError("simulated data needs data.D (or sites)")
    if "sites" in data and "D" in data and len(data["sites"]) != data["D"]:
        raise ConfigError(f"data.D = {data['D']} but {len(data['sites'])} sites were given")
    if cfg.command == "fit" and not cfg.has_vi:
        raise ConfigError("command 'fit' needs a [vi] section")
    if cfg.has_vi and len(vi["init"]) != len(names):
        raise ConfigError(f"{_where(text, 'vi', 'init')} needs {len(names)} values {names}")
    if cfg.has_vi and vi["init_alpha"] <= -vi["init_delta"]:
        raise ConfigError(f"{_where(text, 'vi', 'init_alpha')} must exceed -init_delta")
    if "batch_size" in vi and "n" in data and vi["batch_size"] > data["n"]:
        raise ConfigError(f"{_where(text, 'vi', 'batch_size')} exceeds data.n = {data['n']}")
    mle = cfg.section("mle")
    if "init" in mle and len(mle["init"]) != len(names):
        raise ConfigError(f"{_where(text, 'mle', 'init')} needs {len(names)} values {names}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)
