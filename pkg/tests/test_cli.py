import json
import math
import subprocess
import sys

import numpy as np
import pytest

from pqsp import io as pio
from pqsp.cli import (DEFAULT_CONFIG, EXIT_CERT, EXIT_CONFIG, EXIT_NOCONV,
                      EXIT_OK, env_overrides, load_config, main)
from pqsp.grid import ConfigError


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg, *extra, out="out"):
    args = [command, "--config", write_cfg(tmp_path, cfg),
            "--out", str(tmp_path / out), "--deterministic", *extra]
    return main(args), tmp_path / out


def files_of(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


SMALL = {"grid": {"R": 10.0, "n": 256}}


# -- configuration ------------------------------------------------------------

def test_defaults_and_merge(tmp_path):
    cfg = load_config(write_cfg(tmp_path, {"params": {"r": 3.5}}), environ={})
    assert cfg["params"]["r"] == 3.5 and cfg["params"]["p"] == 2.0
    assert DEFAULT_CONFIG["params"]["r"] == 4.0


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"gird": {}}), environ={})
    assert main(["verify", "--config",
                 write_cfg(tmp_path, {"params": {"x": 1}})]) == EXIT_CONFIG


def test_env_override():
    env = {"PQSP_GRID__N": "2048", "PQSP_GRID__R": "12.5",
           "PQSP_PARAMS__LAMBDA": "0.5", "PQSP_OUTPUT_DIR": "here",
           "OTHER": "1"}
    assert env_overrides(env)["grid"] == {"n": 2048, "r": 12.5}
    cfg = load_config(environ=env)
    assert cfg["grid"]["n"] == 2048 and cfg["grid"]["R"] == 12.5
    assert cfg["params"]["lambda"] == 0.5 and cfg["output_dir"] == "here"


def test_env_override_applies_in_main(tmp_path, monkeypatch):
    monkeypatch.setenv("PQSP_GRID__N", "128")
    code, out = run(tmp_path, "solve-poisson", SMALL)
    assert code == EXIT_OK
    phi = pio.load_field(out / "phi.csv")
    assert phi.grid.n == 128


# -- solve-poisson --------------------------------------------------------------

def test_solve_poisson_oracle(tmp_path):
    code, out = run(tmp_path, "solve-poisson",
                    {"grid": {"R": 20.0, "n": 4096}}, "--oracle")
    assert code == EXIT_OK
    diag = pio.read_json(out / "diagnostics.json")
    assert diag["oracle"]["kind"] == "newton_potential"
    assert diag["oracle"]["linf_rel"] < 1e-3
    assert (out / "oracle.csv").exists() and (out / "phi.csv").exists()


def test_solve_poisson_flux_oracle(tmp_path):
    cfg = dict(SMALL, params={"q": 2.5})
    code, out = run(tmp_path, "solve-poisson", cfg, "--oracle")
    assert code == EXIT_OK
    diag = pio.read_json(out / "diagnostics.json")
    assert diag["oracle"]["kind"] == "radial_flux"
    assert diag["oracle"]["linf_rel"] < 1e-3


def test_solve_poisson_zero_source(tmp_path):
    cfg = dict(SMALL, seed_profile={"kind": "gaussian", "amplitude": 0.0,
                                    "rate": 1.0})
    code, out = run(tmp_path, "solve-poisson", cfg)
    assert code == EXIT_OK
    assert not np.any(pio.load_field(out / "phi.csv").values)


def test_invalid_q_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "solve-poisson", {"params": {"q": 3.0}})
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "RangeError" in err and "q=3.0" in err


# -- find-critical and verify ---------------------------------------------------

@pytest.fixture(scope="module")
def critical_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("crit")
    code, out = run(d, "find-critical", {})
    return d, code, out


def test_find_critical_certificate(critical_run):
    _, code, out = critical_run
    assert code == EXIT_OK
    doc = pio.read_json(out / "critical_point.json")
    assert doc["status"] == "converged"
    cert = doc["certificate"]
    assert cert["criticality"] <= 1e-6 and cert["pde_residual"] <= 1e-4
    assert cert["energy"] > 0 and cert["norm_u"] >= 0.1
    assert abs(cert["j_tilde"]) / cert["energy"] < 1e-3
    trace = pio.read_table(out / "trace.csv")
    assert trace and {"iter", "max_energy", "grad_norm", "norm_u"} <= set(
        trace[0])


def test_provenance_everywhere(critical_run):
    _, _, out = critical_run
    for name in ("u.csv", "trace.csv"):
        side = pio.read_json(pio.sidecar_path(out / name))
        prov = side.get("provenance", side)
        assert prov["config"]["params"]["r"] == 4.0
        assert "created" not in prov
    doc = pio.read_json(out / "critical_point.json")
    assert doc["provenance"]["command"] == "find-critical"


def test_verify_command(critical_run):
    d, _, out = critical_run
    code, vout = run(d, "verify", {}, "--field", str(out / "u.csv"),
                     out="verify")
    assert code == EXIT_OK
    cert = pio.read_json(vout / "certificate.json")["certificate"]
    ref = pio.read_json(out / "critical_point.json")["certificate"]
    assert cert == ref


def test_resume_reproduces_certificate(critical_run):
    d, _, out = critical_run
    code, rout = run(d, "find-critical", {}, "--resume", str(out / "u.csv"),
                     out="resume")
    assert code == EXIT_OK
    a = pio.read_json(out / "critical_point.json")["certificate"]
    b = pio.read_json(rout / "critical_point.json")["certificate"]
    for k in a:
        if isinstance(a[k], float):
            assert b[k] == pytest.approx(a[k], rel=1e-9, abs=1e-12), k


def test_deterministic_outputs_byte_identical(tmp_path):
    cfg = {"grid": {"R": 12.0, "n": 384}}
    c1, o1 = run(tmp_path, "find-critical", cfg, out="a")
    c2, o2 = run(tmp_path, "find-critical", cfg, out="b")
    assert c1 == c2 == EXIT_OK
    fa, fb = files_of(o1), files_of(o2)
    assert fa.keys() == fb.keys()
    for name in fa:
        # the output directory name is part of the recorded config
        assert fa[name].replace(b"/a", b"/b") == fb[name], name


def test_verify_needs_field(tmp_path):
    code, _ = run(tmp_path, "verify", SMALL)
    assert code == EXIT_CONFIG


def test_verify_zero_field_fails_certificate(tmp_path):
    from pqsp.grid import make_grid, zeros
    pio.write_field(tmp_path / "z.csv", zeros(make_grid(10.0, 256)))
    code, out = run(tmp_path, "verify", SMALL, "--field",
                    str(tmp_path / "z.csv"))
    assert code == EXIT_CERT
    assert pio.read_json(out / "certificate.json")["certificate"]["trivial"]


def test_no_convergence_exit_code(tmp_path):
    cfg = dict(SMALL, mpa={"max_outer_iters": 1, "newton_iters": 0})
    code, out = run(tmp_path, "find-critical", cfg)
    assert code == EXIT_NOCONV
    doc = pio.read_json(out / "critical_point.json")
    assert doc["status"] == "no_convergence"


def test_certificate_threshold_exit_code(tmp_path):
    cfg = {"thresholds": {"j_tilde_ratio": 1e-12}}
    code, out = run(tmp_path, "find-critical", cfg)
    assert code == EXIT_CERT
    assert pio.read_json(out / "critical_point.json")["status"] == "converged"


# -- sweeps ---------------------------------------------------------------------

def test_r_sweep_regime_flip(tmp_path):
    vals = [2.5, 2.9, 3.0, 3.1, 3.5]
    cfg = {"sweep": {"axis": "r", "values": vals, "run": False}}
    code, out = run(tmp_path, "sweep", cfg)
    assert code == EXIT_OK
    rows = pio.read_table(out / "sweep.csv")
    assert [float(r["value"]) for r in rows] == vals
    assert [r["regime"] for r in rows] == ["SmallLambda"] * 3 + \
        ["AnyLambda"] * 2
    assert all(float(r["r_threshold"]) == 3.0 for r in rows)


def test_empty_sweep(tmp_path):
    code, out = run(tmp_path, "sweep", {"sweep": {"values": []}})
    assert code == EXIT_OK
    text = (out / "sweep.csv").read_text().splitlines()
    assert len(text) == 1 and text[0].startswith("axis,value")


def test_sweep_rejects_unsorted_or_nonfinite(tmp_path):
    assert run(tmp_path, "sweep", {"sweep": {"values": [2, 1]}})[0] == \
        EXIT_CONFIG
    assert run(tmp_path, "sweep",
               {"sweep": {"values": [1, math.inf]}})[0] == EXIT_CONFIG
    assert run(tmp_path, "sweep", {"sweep": {"axis": "x"}})[0] == EXIT_CONFIG


def test_sweep_rows_record_failures(tmp_path):
    cfg = {"sweep": {"axis": "r", "values": [1.5, 3.5], "run": False}}
    code, out = run(tmp_path, "sweep", cfg)
    assert code == EXIT_OK
    rows = pio.read_table(out / "sweep.csv")
    assert rows[0]["status"] == "RangeError" and "r=1.5" in rows[0]["error"]
    assert rows[1]["status"] == "classified"


def test_t_sweep_matches_closed_form(tmp_path):
    from pqsp.energy import scaled_energy_closed_form
    from pqsp.grid import Gaussian, from_profile, make_grid
    from pqsp.params import validate_params
    cfg = {"sweep": {"axis": "t", "values": [1.0, 2.0]},
           "grid": {"R": 15.0, "n": 1024}}
    code, out = run(tmp_path, "sweep", cfg)
    assert code == EXIT_OK
    rows = pio.read_table(out / "sweep.csv")
    e = validate_params(2, 2, 2, 4, 1)
    u = from_profile(make_grid(15.0, 1024), Gaussian())
    assert float(rows[0]["level"]) == pytest.approx(
        scaled_energy_closed_form(u, 1.0, e).total, rel=1e-12)


@pytest.mark.slow
def test_lambda_bisection_sweep(tmp_path):
    cfg = {"params": {"r": 2.5},
           "sweep": {"axis": "lambda", "mode": "bisection", "lam_ok": 1e-3,
                     "lam_fail": 0.25, "ratio": 1.1}}
    code, out = run(tmp_path, "sweep", cfg)
    assert code == EXIT_OK
    br = pio.read_json(out / "bracket.json")
    assert br["lam_fail"] / br["lam_ok"] <= 1.1
    assert br["ok"]["within_window"] is True
    rows = pio.read_table(out / "bisection.csv")
    assert len(rows) >= 3


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "pqsp.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
