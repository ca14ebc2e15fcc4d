import csv
import logging

import numpy as np
import pytest

from msvi.cli import main, run_experiment, summarize
from msvi.config import ConfigError, load_config, parse_config

MINIMAL = """\
command = "fit"
model = "logistic"
seed = 4

[truth]
theta = 0.8

[data]
D = 3
n = 6

[vi]
M = 3
R = 15
lr_theta = 1e-3
lr_phi = 1e-5
init = [0.6]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config_parses_and_echoes_defaults(caplog):
    with caplog.at_level(logging.INFO, logger="msvi.config"):
        cfg = parse_config(MINIMAL)
    assert cfg.command == "fit" and cfg.section("vi")["momentum"] == 0.9
    assert "vi.momentum = 0.9 (default)" in caplog.text
    assert "vi.init_alpha = 5.0 (default)" in caplog.text


def test_delta_one_rejected_with_line():
    text = MINIMAL + "init_delta = 1.0\n"
    with pytest.raises(ConfigError, match=r"vi.init_delta' \(line 18\)"):
        parse_config(text)


def test_missing_learning_rate_rejected():
    with pytest.raises(ConfigError, match="lr_phi"):
        parse_config(MINIMAL.replace("lr_phi = 1e-5\n", ""))


def test_unknown_key_and_type_errors():
    with pytest.raises(ConfigError, match=r"unknown key 'data.DD' \(line 9\)"):
        parse_config(MINIMAL.replace("D = 3", "DD = 3"))
    with pytest.raises(ConfigError, match=r"'vi.M' \(line 13\) must be of type int"):
        parse_config(MINIMAL.replace("M = 3", 'M = "three"'))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(MINIMAL + "[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("command = ")


def test_consistency_checks(tmp_path):
    with pytest.raises(ConfigError, match="init"):
        parse_config(MINIMAL.replace('model = "logistic"', 'model = "brown_resnick"').replace(
            "theta = 0.8", "lam = 1.0\nnu = 1.0"))
    with pytest.raises(ConfigError, match="missing file"):
        parse_config(MINIMAL.replace("D = 3\n", 'obs_file = "nope.csv"\n'),
                     tmp_path)
    with pytest.raises(ConfigError, match="batch_size"):
        parse_config(MINIMAL + "batch_size = 50\n")


def test_cli_exit_codes(tmp_path):
    assert main(["--config", str(write(tmp_path, MINIMAL + "bogus = 1\n")), "--out", str(tmp_path / "o")]) == 2
    assert main(["--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["--config", str(write(tmp_path, MINIMAL)), "--out", str(tmp_path / "o"), "-q"]) == 0
    assert (tmp_path / "o" / "trace.csv").exists() and (tmp_path / "o" / "estimate.csv").exists()


def test_cli_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    main(["--config", str(cfg), "--out", str(tmp_path / "a"), "-q"])
    main(["--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "5", "-q"])
    a = (tmp_path / "a" / "trace.csv").read_text()
    b = (tmp_path / "b" / "trace.csv").read_text()
    assert a != b and "seed=5" in b.splitlines()[0]


def test_simulate_fit_from_files_round_trip(tmp_path):
    sim = MINIMAL.replace('command = "fit"', 'command = "simulate"')
    run_experiment(parse_config(sim), tmp_path / "sim")
    fit_from_files = MINIMAL.replace("D = 3\nn = 6\n",
                                     'sites_file = "sim/sites.csv"\nobs_file = "sim/observations.csv"\n')
    direct = run_experiment(parse_config(MINIMAL), tmp_path / "direct")
    files = run_experiment(parse_config(fit_from_files.replace("[truth]\ntheta = 0.8\n", ""), tmp_path),
                           tmp_path / "files")
    assert direct == files == 0
    body = lambda p: p.read_text().splitlines()[1:]
    assert body(tmp_path / "direct" / "trace.csv") == body(tmp_path / "files" / "trace.csv")


def test_mle_command(tmp_path):
    cfg = parse_config(MINIMAL.replace('command = "fit"', 'command = "mle"'))
    assert run_experiment(cfg, tmp_path) == 0
    rows = list(csv.reader((tmp_path / "mle.csv").open()))
    assert rows[0][0].startswith("# artifact") and rows[1] == ["theta", "loglik", "n_evals", "converged"]
    assert len(rows) == 3


SWEEP = """\
command = "sweep"
model = "logistic"
seed = 9

[truth]
theta = 0.7

[data]
D = 3
n = 8

[vi]
M = 2
R = 10
lr_theta = 1e-3
lr_phi = 1e-5
init = [0.6]

[sweep]
replications = 4
M_values = [1, 3]
bootstrap = 500
"""


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def test_sweep_summary_recomputes_from_replications(tmp_path):
    cfg = parse_config(SWEEP)
    assert run_experiment(cfg, tmp_path) == 0
    reps = read_rows(tmp_path / "replications.csv")
    assert len(reps) == 4 * 3
    recomputed = summarize(reps, cfg.seed, 500)
    emitted = read_rows(tmp_path / "summary.csv")
    assert len(recomputed) == len(emitted) == 3
    for r, e in zip(recomputed, emitted):
        for key in ("mean", "sd", "ci_lo", "ci_hi"):
            assert repr(r[key]) == e[key]
        assert str(r["n_reps"]) == e["n_reps"] and str(r["n_failed"]) == e["n_failed"]


def test_sweep_records_failures(tmp_path):
    # an absurd learning rate makes every VI fit blow up; MLE still succeeds
    cfg = parse_config(SWEEP.replace("lr_theta = 1e-3", "lr_theta = 1e6").replace(
        "lr_phi = 1e-5", "lr_phi = 1e6"))
    code = run_experiment(cfg, tmp_path)
    rows = read_rows(tmp_path / "replications.csv")
    vi = [r for r in rows if r["estimator"] == "vi"]
    assert code == 0
    assert all(r["status"] == "ok" for r in rows if r["estimator"] == "mle")
    summary = read_rows(tmp_path / "summary.csv")
    assert sum(int(s["n_failed"]) for s in summary) == sum(r["status"] != "ok" for r in vi)


def test_sweep_all_failed_exit_code(tmp_path):
    cfg = parse_config(SWEEP.replace("lr_theta = 1e-3", "lr_theta = 1e6").replace(
        "lr_phi = 1e-5", "lr_phi = 1e6").replace("bootstrap = 500", 'bootstrap = 500\nestimators = ["vi"]'))
    code = run_experiment(cfg, tmp_path)
    rows = read_rows(tmp_path / "replications.csv")
    assert code == (3 if all(r["status"] != "ok" for r in rows) else 0)
