import csv
import json

import pytest

from mfgvv.cli import main
from mfgvv.config import config_hash, resolve_config
from mfgvv.errors import ConfigurationError
from mfgvv.experiments import (
    FBSDE_HEADER,
    ORACLE_HEADER,
    PARTICLES_HEADER,
    PI_HEADER,
    RATES_HEADER,
    SWEEP_HEADER,
    geometric_ratio,
)

SMALL = {
    "domain": {"kind": "truncated", "x_min": -5.0, "x_max": 5.0, "n": 100},
    "time": {"T": 1.0, "nt": 200},
    "betas": [0.2, 0.4],
}


def write_config(tmp_path, name="cfg.json", **extra):
    cfg = dict(SMALL, output={"dir": str(tmp_path / "out")})
    cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_sweep_writes_exact_headers_and_hash(tmp_path, capsys):
    cfg_path = write_config(tmp_path, output={"dir": str(tmp_path / "out"), "emit_svg": True})
    assert main(["sweep-beta", "--config", str(cfg_path)]) == 0
    out = tmp_path / "out"
    sweep, rates = read_rows(out / "sweep_beta.csv"), read_rows(out / "rates.csv")
    assert sweep[0] == SWEEP_HEADER and rates[0] == RATES_HEADER
    h = config_hash(resolve_config(json.loads(cfg_path.read_text())))
    assert all(r[-1] == h for r in sweep[1:] + rates[1:])
    assert len(sweep) == 3
    report = json.loads((out / "sweep_beta_report.json").read_text())
    assert report["config_hash"] == h
    for name in ("u_initial.svg", "rho_final.svg", "rates.svg"):
        assert (out / name).read_text().startswith("<svg")
    text = capsys.readouterr().out
    assert "slope (full)" in text and "numerical viscosity" in text


def test_csv_floats_round_trip(tmp_path):
    assert main(["sweep-beta", "--config", str(write_config(tmp_path))]) == 0
    row = read_rows(tmp_path / "out" / "sweep_beta.csv")[1]
    v = row[1]
    assert float(format(float(v), ".17g")) == float(v)


@pytest.mark.parametrize("command, header, name", [
    ("oracle-check", ORACLE_HEADER, "oracle_check.csv"),
    ("fbsde", FBSDE_HEADER, "fbsde.csv"),
])
def test_other_headers(tmp_path, command, header, name):
    assert main([command, "--config", str(write_config(tmp_path))]) == 0
    assert read_rows(tmp_path / "out" / name)[0] == header


def test_particles_header_and_seed_flag(tmp_path):
    cfg = write_config(tmp_path, particles={"N_list": [20, 40], "seeds": [0, 1], "record_every": 50})
    assert main(["particles", "--config", str(cfg), "--seed", "5"]) == 0
    rows = read_rows(tmp_path / "out" / "particles.csv")
    assert rows[0] == PARTICLES_HEADER
    assert {r[2] for r in rows[1:]} == {"5", "6"}


def test_policy_iteration_header(tmp_path):
    cfg = write_config(tmp_path, solver={"coupler": "policy_iteration", "tol": 1e-8, "max_iter": 4})
    assert main(["policy-iteration", "--config", str(cfg)]) == 0
    rows = read_rows(tmp_path / "out" / "pi_residuals.csv")
    assert rows[0] == PI_HEADER and len(rows) >= 2


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["sweep-beta", "--config", str(bad)]) == 2
    assert main(["sweep-beta", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["sweep-beta", "--config", str(write_config(tmp_path, colour="red"))]) == 2
    assert main(["sweep-beta", "--config", str(write_config(tmp_path, model={"name": "nope"}))]) == 2
    assert main(["sweep-beta", "--config", str(write_config(tmp_path)), "--workers", "0"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_all_cells_failed_exit_3(tmp_path):
    cfg = write_config(tmp_path, solver={"tol": 0.0, "max_iter": 1})
    assert main(["sweep-beta", "--config", str(cfg)]) == 3
    rows = read_rows(tmp_path / "out" / "sweep_beta.csv")
    assert all(r[SWEEP_HEADER.index("status")] == "failed" for r in rows[1:])


def test_check_breach_exit_4(tmp_path, capsys):
    cfg = write_config(tmp_path, check={"slope_full": [5.0, 6.0]})
    assert main(["sweep-beta", "--config", str(cfg)]) == 0
    assert main(["sweep-beta", "--config", str(cfg), "--check"]) == 4
    assert "slope_full" in capsys.readouterr().err


def test_repeat_runs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, particles={"N_list": [20], "seeds": [0, 1], "record_every": 50})
    for command in ("sweep-beta", "particles"):
        main([command, "--config", str(cfg), "--out", str(tmp_path / "a")])
        main([command, "--config", str(cfg), "--out", str(tmp_path / "b")])
    for name in ("sweep_beta.csv", "rates.csv", "particles.csv", "sweep_beta_report.json", "particles_report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_worker_count_does_not_change_output(tmp_path):
    cfg = write_config(tmp_path, particles={"N_list": [20], "seeds": [0, 1], "record_every": 50})
    for command in ("sweep-beta", "particles"):
        main([command, "--config", str(cfg), "--out", str(tmp_path / "w1"), "--workers", "1"])
        main([command, "--config", str(cfg), "--out", str(tmp_path / "w2"), "--workers", "2"])
    for name in ("sweep_beta.csv", "particles.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_hash_ignores_output_and_workers():
    a = resolve_config(dict(SMALL, output={"dir": "x"}, workers=1))
    b = resolve_config(dict(SMALL, output={"dir": "y", "emit_svg": True}, workers=3))
    c = resolve_config(dict(SMALL, betas=[0.2]))
    assert config_hash(a) == config_hash(b) != config_hash(c)
    assert len(config_hash(a)) == 16


@pytest.mark.parametrize("raw", [
    [1, 2],
    dict(SMALL, betas=[]),
    dict(SMALL, betas=[-0.1]),
    dict(SMALL, mode="fast"),
    dict(SMALL, mode="exact", model={"name": "congestion"}),
    dict(SMALL, restriction={"x_lo": 1.0, "x_hi": 0.0}),
    dict(SMALL, solver={"scheme": "weno"}),
    dict(SMALL, g={"name": "cubic"}),
    dict(SMALL, domain={"kind": "truncated", "x_min": 6.0, "x_max": 5.0, "n": 100}),
    dict(SMALL, domain={"kind": "truncated", "x_min": 0.0, "x_max": 1.0, "n": 1}),
])
def test_config_validation(raw):
    with pytest.raises(ConfigurationError):
        resolve_config(raw)


def test_geometric_ratio():
    assert geometric_ratio([1.0, 0.5, 0.25, 0.125], 1, 4) == pytest.approx(0.5)
    assert geometric_ratio([1.0, 0.0, 0.0], 2, 3) == 0.0
    assert geometric_ratio([1.0, 0.1, 0.01], 1, 10) == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        geometric_ratio([1.0], 3, 10)
