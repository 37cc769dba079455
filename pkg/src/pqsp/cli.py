"""Batch front end: ``pqsp solve-poisson | find-critical | verify | sweep``.

Configuration is one JSON document (``--config``) merged over
:data:`DEFAULT_CONFIG`. Any key can be overridden from the environment:
``PQSP_GRID__N=2048`` sets ``config["grid"]["n"]``, with the value parsed as
JSON when possible. Every output carries the resolved configuration, either
embedded (JSON documents) or in a ``.json`` sidecar (CSV files).

Exit codes: 0 success, 2 configuration or validation error, 3 no
convergence, 4 certificate failure (converged, thresholds unmet).
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io as pio
from .energy import CutoffConfig, J, norm_u
from .grid import (ConfigError, from_profile, grid_from_spec,
                   profile_from_dict, rescale_field)
from .mpa import (MpaConfig, PathNotAdmissible, WindowViolation,
                  default_cutoff, lambda_bisection, run_mpa,
                  verify_critical_point)
from .params import RangeError, Regime, theorem_regime, validate_params
from .qpoisson import (NoConvergence, PoissonProblem, oracle_flux, oracle_q2,
                       solve_q_poisson)

log = logging.getLogger("pqsp")

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV, EXIT_CERT = 0, 2, 3, 4
ENV_PREFIX = "PQSP_"

DEFAULT_CONFIG = {
    "params": {"p": 2.0, "q": 2.0, "s": 2.0, "r": 4.0, "lambda": 1.0},
    "grid": {"R": 15.0, "n": 1024, "grading": "uniform", "ratio": None},
    "poisson": {"tol": 1e-10, "eps_factor": 1e-6, "max_iters": 500},
    "mpa": {},
    "cutoff": {"M": None, "auto": True},
    "seed_profile": {"kind": "gaussian", "amplitude": 1.0, "rate": 1.0},
    "u_field": None,
    "init_field": None,
    "output_dir": "pqsp-out",
    "deterministic": False,
    "thresholds": {"j_tilde_ratio": 1e-3},
    "sweep": {"axis": "lambda", "values": [], "mode": "grid", "run": True,
              "lam_ok": None, "lam_fail": None, "ratio": 1.1},
}


# -- configuration ------------------------------------------------------------

def _merge(base, update, path=""):
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "mpa":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val
    return base


def _parse_env_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def env_overrides(environ=None):
    """Nested dict built from ``PQSP_A__B=value`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, text in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__")]
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = _parse_env_value(text)
    return out


def _fix_keys(over):
    # environment names are upper case; the grid radius is "R"
    grid = over.get("grid")
    if isinstance(grid, dict) and "r" in grid:
        grid["R"] = grid.pop("r")
    return over


def load_config(path=None, *, environ=None, overrides=None):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        _merge(cfg, user)
    _merge(cfg, _fix_keys(env_overrides(environ)))
    if overrides:
        _merge(cfg, overrides)
    return cfg


def exponents(cfg):
    p = cfg["params"]
    return validate_params(p["p"], p["q"], p["s"], p["r"], p["lambda"])


def grid_of(cfg):
    return grid_from_spec(cfg["grid"])


def mpa_config(cfg, cutoff=None):
    kw = dict(cfg["mpa"])
    if "regime" in kw and kw["regime"] is not None:
        kw["regime"] = Regime(kw["regime"])
    kw.setdefault("poisson_tol", cfg["poisson"]["tol"])
    try:
        return MpaConfig(cutoff=cutoff, **kw)
    except TypeError as exc:
        raise ConfigError(f"bad mpa config: {exc}") from exc


def seed_of(cfg):
    return profile_from_dict(cfg["seed_profile"])


def provenance(cfg, command):
    out = {"command": command, "config": cfg, "pqsp": __version__,
           "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__}
    if not cfg["deterministic"]:
        out["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return out


def _out_dir(cfg):
    d = Path(cfg["output_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _input_field(cfg, key, grid):
    path = cfg[key]
    if path is None:
        return None
    u = pio.load_field(path)
    if not u.grid.same_as(grid):
        raise ConfigError(f"{key} grid differs from the configured grid")
    return u


# -- commands -----------------------------------------------------------------

def cmd_solve_poisson(cfg, *, oracle=False):
    e = exponents(cfg)
    grid = grid_of(cfg)
    u = _input_field(cfg, "u_field", grid) or from_profile(grid, seed_of(cfg))
    pc = cfg["poisson"]
    sol = solve_q_poisson(PoissonProblem(u, e.q, e.s, tol=pc["tol"],
                                         eps_factor=pc["eps_factor"],
                                         max_iters=pc["max_iters"]))
    out = _out_dir(cfg)
    prov = provenance(cfg, "solve-poisson")
    pio.write_field(out / "phi.csv", sol.phi, provenance=prov)
    diag = {"provenance": prov, "solution": sol.diagnostics()}
    if oracle:
        ref = oracle_q2(u, e.s) if e.q == 2.0 else oracle_flux(u, e.q, e.s)
        pio.write_field(out / "oracle.csv", ref, provenance=prov)
        scale = float(np.max(np.abs(ref.values)))
        err = float(np.max(np.abs(sol.phi.values - ref.values)))
        diag["oracle"] = {
            "kind": "newton_potential" if e.q == 2.0 else "radial_flux",
            "linf_abs": err,
            "linf_rel": err / scale if scale > 0 else err,
        }
    pio.write_json(out / "diagnostics.json", diag)
    return EXIT_OK


def _cutoff_for(cfg, e, grid):
    if theorem_regime(e) is not Regime.SMALL_LAMBDA:
        return None
    c = cfg["cutoff"]
    if c["M"] is not None:
        return CutoffConfig(M=float(c["M"]))
    if not c["auto"]:
        raise ConfigError("SmallLambda regime needs cutoff.M or cutoff.auto")
    return default_cutoff(e, grid, seed_of(cfg), mpa_config(cfg))


def _certificate_ok(cert, mcfg, cfg):
    ok = (cert["criticality"] <= mcfg.criticality_tol
          and cert["pde_residual"] <= mcfg.residual_tol
          and cert["norm_u"] > 0 and cert["energy"] > 0)
    if cert.get("j_tilde") is not None and cert["energy"] > 0:
        ok = ok and (abs(cert["j_tilde"]) / cert["energy"]
                     <= cfg["thresholds"]["j_tilde_ratio"])
    return ok


def _write_point(out, point, cfg, prov, e, cutoff, status):
    pio.write_table(out / "trace.csv", point.trace,
                    ["iter", "phase", "max_energy", "max_after_step",
                     "grad_norm", "criticality", "norm_u", "max_index"],
                    provenance=prov)
    pio.write_field(out / "u.csv", point.u, provenance=prov)
    cert = verify_critical_point(point.u, e, cutoff=cutoff,
                                 tol=cfg["poisson"]["tol"])
    doc = {"provenance": prov, "status": status, "certificate": cert,
           "run": point.summary(),
           "cutoff": None if cutoff is None else {"M": cutoff.M}}
    pio.write_json(out / "critical_point.json", doc)
    return cert


def cmd_find_critical(cfg):
    e = exponents(cfg)
    grid = grid_of(cfg)
    cutoff = _cutoff_for(cfg, e, grid)
    mcfg = mpa_config(cfg, cutoff)
    out = _out_dir(cfg)
    prov = provenance(cfg, "find-critical")
    start = _input_field(cfg, "init_field", grid)
    try:
        point = run_mpa(e, grid, mcfg, seed_profile=seed_of(cfg), start=start)
    except NoConvergence as exc:
        if exc.best is not None:
            _write_point(out, exc.best, cfg, prov, e, cutoff, "no_convergence")
        print(f"pqsp: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except WindowViolation as exc:
        if exc.point is not None:
            _write_point(out, exc.point, cfg, prov, e, cutoff,
                         "window_violation")
        print(f"pqsp: {exc}", file=sys.stderr)
        return EXIT_CERT
    cert = _write_point(out, point, cfg, prov, e, cutoff, "converged")
    return EXIT_OK if _certificate_ok(cert, mcfg, cfg) else EXIT_CERT


def cmd_verify(cfg):
    e = exponents(cfg)
    grid = grid_of(cfg)
    u = _input_field(cfg, "u_field", grid)
    if u is None:
        raise ConfigError("verify needs u_field")
    cutoff = _cutoff_for(cfg, e, grid) if cfg["cutoff"]["M"] is not None \
        else None
    cert = verify_critical_point(u, e, cutoff=cutoff, tol=cfg["poisson"]["tol"])
    out = _out_dir(cfg)
    pio.write_json(out / "certificate.json",
                   {"provenance": provenance(cfg, "verify"),
                    "certificate": cert})
    if cert["trivial"]:
        return EXIT_CERT
    return EXIT_OK if _certificate_ok(cert, mpa_config(cfg), cfg) else EXIT_CERT


SWEEP_COLUMNS = ["axis", "value", "regime", "r_threshold", "status", "level",
                 "norm_u", "criticality", "pde_residual", "poisson_residual",
                 "j_tilde", "cutoff_active", "within_window", "morse_index",
                 "error"]


def _sweep_row(cfg, axis, value):
    row = {"axis": axis, "value": value}
    local = copy.deepcopy(cfg)
    if axis == "lambda":
        local["params"]["lambda"] = value
    elif axis == "r":
        local["params"]["r"] = value
    try:
        e = exponents(local)
        row["regime"] = theorem_regime(e).value
        row["r_threshold"] = e.r_threshold
        grid = grid_of(local)
        if axis == "t":
            u = from_profile(grid, seed_of(local).rescaled(value,
                                                           e.scaling_k))
            row["level"] = J(u, e).total
            row["norm_u"] = norm_u(u, e)
            row["status"] = "evaluated"
            return row
        if not local["sweep"]["run"]:
            row["status"] = "classified"
            return row
        cutoff = _cutoff_for(local, e, grid)
        point = run_mpa(e, grid, mpa_config(local, cutoff),
                        seed_profile=seed_of(local))
        row["status"] = "converged"
    except (NoConvergence, WindowViolation) as exc:
        point = exc.best if isinstance(exc, NoConvergence) else exc.point
        row["status"] = type(exc).__name__
        row["error"] = str(exc)
        if point is None:
            return row
    except (RangeError, PathNotAdmissible, ValueError) as exc:
        row["status"] = type(exc).__name__
        row["error"] = str(exc)
        return row
    s = point.summary()
    for k in ("level", "norm_u", "criticality", "pde_residual",
              "poisson_residual", "j_tilde", "cutoff_active",
              "within_window", "morse_index"):
        row[k] = s[k]
    return row


def cmd_sweep(cfg):
    sw = cfg["sweep"]
    axis = sw["axis"]
    if axis not in ("lambda", "r", "t"):
        raise ConfigError(f"sweep axis must be lambda, r or t, not {axis!r}")
    out = _out_dir(cfg)
    prov = provenance(cfg, "sweep")
    if sw["mode"] == "bisection":
        return _sweep_bisection(cfg, out, prov)
    if sw["mode"] != "grid":
        raise ConfigError(f"unknown sweep mode {sw['mode']!r}")
    values = [float(v) for v in sw["values"]]
    if not all(math.isfinite(v) for v in values):
        raise ConfigError("sweep values must be finite")
    if values != sorted(values):
        raise ConfigError("sweep values must be sorted")
    rows = [_sweep_row(cfg, axis, v) for v in values]
    pio.write_table(out / "sweep.csv", rows, SWEEP_COLUMNS, provenance=prov)
    return EXIT_OK


def _sweep_bisection(cfg, out, prov):
    sw = cfg["sweep"]
    if sw["axis"] != "lambda":
        raise ConfigError("bisection mode needs axis = lambda")
    values = [float(v) for v in sw["values"]]
    lam_ok = sw["lam_ok"] if sw["lam_ok"] is not None else (
        values[0] if values else None)
    lam_fail = sw["lam_fail"] if sw["lam_fail"] is not None else (
        values[-1] if values else None)
    if lam_ok is None or lam_fail is None:
        raise ConfigError("bisection needs lam_ok and lam_fail")
    e = exponents(cfg)
    grid = grid_of(cfg)
    cutoff = None
    if cfg["cutoff"]["M"] is not None:
        cutoff = CutoffConfig(M=float(cfg["cutoff"]["M"]))
    try:
        res = lambda_bisection(e, grid, mpa_config(cfg, cutoff),
                               lam_ok=float(lam_ok), lam_fail=float(lam_fail),
                               ratio=float(sw["ratio"]),
                               seed_profile=seed_of(cfg))
    except WindowViolation as exc:
        print(f"pqsp: {exc}", file=sys.stderr)
        return EXIT_CERT
    except NoConvergence as exc:
        print(f"pqsp: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    pio.write_table(out / "bisection.csv", res.rows,
                    ["lambda", "within_window", "outcome", "level", "norm_u",
                     "criticality", "pde_residual", "uncut_criticality",
                     "morse_index"], provenance=prov)
    pio.write_field(out / "u_ok.csv", res.point_ok.u, provenance=prov)
    pio.write_json(out / "bracket.json", {
        "provenance": prov, "lam_ok": res.lam_ok, "lam_fail": res.lam_fail,
        "ratio": res.ratio, "fail_reason": res.fail_reason, "M": res.M,
        "ok": res.point_ok.summary(),
        "fail": None if res.point_fail is None else res.point_fail.summary(),
    })
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="pqsp", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve-poisson", "find-critical", "verify", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--deterministic", action="store_true",
                        help="no timestamps; byte-identical outputs")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "solve-poisson":
            sp.add_argument("--oracle", action="store_true",
                            help="also write the quadrature oracle and errors")
        if name == "verify":
            sp.add_argument("--field", type=Path, help="field CSV to verify")
        if name == "find-critical":
            sp.add_argument("--resume", type=Path,
                            help="start the polish from a written field CSV")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    over = {}
    if args.out is not None:
        over["output_dir"] = str(args.out)
    if args.deterministic:
        over["deterministic"] = True
    if getattr(args, "field", None) is not None:
        over["u_field"] = str(args.field)
    if getattr(args, "resume", None) is not None:
        over["init_field"] = str(args.resume)
    try:
        cfg = load_config(args.config, overrides=over)
        if args.command == "solve-poisson":
            return cmd_solve_poisson(cfg, oracle=args.oracle)
        if args.command == "find-critical":
            return cmd_find_critical(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_sweep(cfg)
    except (RangeError, ConfigError) as exc:
        print(f"pqsp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"pqsp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (ValueError, PathNotAdmissible) as exc:
        print(f"pqsp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
