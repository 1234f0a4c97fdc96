"""Command-line front end.

Exit codes: 0 when every check passes, 1 when a check fails, 2 on a
malformed config or a solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (SPEC_ERRORS, ConfigError, ExperimentConfig, build_grid, build_measure,
                     jko_config, load_config, parse_scalar, set_path)
from .costs import ConvexityError, DegenerateCostError, make_profile
from .criteria import (DEFAULT_TEST_FAMILY, CriterionDomainError, classical_lsi_limit,
                       default_z_max, lsi_gap, radial_theta_lsi, simpler_condition,
                       theorem_criterion)
from .diagnostics import DiagnosticsConfigError, lsi_certificate, ppower_flow_constants, tol_d
from .grid import free_energy, make_gibbs, random_smooth_density
from .jko import JkoSolverError, jko_oracle, jko_step, run_flow
from .moduli import make_modulus, ppower_C, ppower_lower_bound, ppower_tp, verify_modulus
from .transport import (DualInfeasibilityError, five_gradients_value, reconstruction_error,
                        solve_transport)

log = logging.getLogger("otlab")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
ERRORS = SPEC_ERRORS + (CriterionDomainError, DiagnosticsConfigError, ConvexityError,
                        DegenerateCostError, ValueError)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


# --- subcommands -------------------------------------------------------------
# Each takes (raw config dict, options namespace, output dir) and returns
# (exit code, report dict).


def cmd_criterion(raw, opts, out: Path):
    exp = ExperimentConfig.from_dict(raw)
    sigma, omega = exp.moduli()
    crit = raw.get("criterion", {})
    z_max = float(crit.get("z_max", default_z_max(exp.V, exp.h)))
    n_z = int(crit.get("n_z", 2000))
    report = {"name": exp.name, "z_max": z_max}
    ok = True
    checks = exp.checks
    if "theorem" in checks:
        rep = theorem_criterion(exp.system(), sigma, omega, z_max, n_z)
        rep.to_csv(out / "theorem_margins.csv")
        report["theorem"] = rep.to_dict()
        ok &= rep.passed
    if "simpler" in checks:
        rep = simpler_condition(exp.h, sigma, omega, z_max, n_z)
        rep.to_csv(out / "simpler_margins.csv")
        report["simpler"] = rep.to_dict()
        ok &= rep.passed
    if "moduli" in checks:
        rs = verify_modulus(exp.V, sigma)
        rw = verify_modulus(exp.V, omega)
        slack = 1e-9 * opts.tol_scale * (1.0 + float(np.max(np.abs(exp.V.values))))
        report["moduli"] = {"sigma_margin": rs.min_margin, "sigma_witness": rs.witness_pair,
                            "omega_margin": rw.min_margin, "omega_witness": rw.witness_pair,
                            "tol": slack}
        ok &= rs.min_margin >= -slack and rw.min_margin >= -slack
    report["passed"] = bool(ok)
    write_json(out / "criterion.json", report)
    return (EXIT_PASS if ok else EXIT_FAIL), report


def _ppower_report(trace, raw):
    pp = raw["ppower"]
    return ppower_flow_constants(trace, float(pp["alpha_coef"]), float(pp["beta_coef"]),
                                 float(pp["p"]), float(pp["tau"]), pp.get("q"))


def cmd_flow(raw, opts, out: Path):
    exp = ExperimentConfig.from_dict(raw)
    system = exp.system()
    sigma, omega = exp.moduli()
    n_steps, cfg = exp.flow_settings()
    if opts.oracle:
        cfg = type(cfg)(**{**cfg.__dict__, "oracle_check": True})
    rho0 = exp.initial()
    trace = run_flow(rho0, exp.V, exp.h, n_steps, cfg, system, sigma, omega, exp.eta)
    trace.to_csv(out / "trace.csv")
    cert = lsi_certificate(trace, tol_scale=opts.tol_scale)
    summary = trace.summary()
    tol = tol_d(exp.grid.dx, 0.0, opts.tol_scale)
    residuals_ok = (summary["min_ent_residual"] >= -tol and summary["min_fisher_residual"] >= -tol)
    report = {"name": exp.name, "summary": summary, "certificate": cert.to_dict(),
              "residual_tol": tol, "residuals_ok": residuals_ok}
    if "ppower" in raw:
        report["ppower"] = _ppower_report(trace, raw)
    ok = cert.status == "certified" and residuals_ok
    if "ppower" in raw:
        ok = ok and report["ppower"]["passed"]
    report["passed"] = bool(ok)
    write_json(out / "summary.json", report)
    return (EXIT_PASS if ok else EXIT_FAIL), report


def _one_step(raw, opts):
    exp = ExperimentConfig.from_dict(raw, need=("grid", "potential", "cost", "initial"))
    cfg = jko_config(raw.get("flow", {}).get("solver"))
    mu = exp.initial()
    res = jko_step(mu, exp.V, exp.h, cfg)
    rec = {"name": exp.name, "residual": res.residual, "objective": res.objective,
           "F_mu": free_energy(mu, exp.V), "inner_iters": res.inner_iters,
           "duality_gap": res.transport.duality_gap, "delta": res.delta,
           "opt_tol": cfg.opt_tol}
    ok = res.residual <= cfg.opt_tol and res.objective <= rec["F_mu"] + 1e-8
    if opts.oracle or cfg.oracle_check:
        oracle = jko_oracle(mu, exp.V, exp.h)
        rec["oracle_distance"] = res.rho_next.sup_distance(oracle)
        ok = ok and rec["oracle_distance"] <= max(1e-3, 10 * cfg.opt_tol)
    rec["passed"] = bool(ok)
    return rec, res, mu


def cmd_step(raw, opts, out: Path):
    cases = raw.get("triples")
    if cases is None:
        rec, res, mu = _one_step(raw, opts)
        with open(out / "step.csv", "w") as fh:
            fh.write("x,mu,rho_next,psi\n")
            for row in zip(mu.nodes, mu.density, res.rho_next.density, res.psi):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        write_json(out / "step.json", rec)
        return (EXIT_PASS if rec["passed"] else EXIT_FAIL), rec
    records = []
    for i, case in enumerate(cases):
        rec, _, _ = _one_step(case, opts)
        rec["index"] = i
        records.append(rec)
    report = {"cases": records, "passed": all(r["passed"] for r in records)}
    write_json(out / "steps.json", report)
    return (EXIT_PASS if report["passed"] else EXIT_FAIL), report


def cmd_transport(raw, opts, out: Path):
    grid = build_grid(raw.get("grid", {}))
    h = make_profile(raw.get("cost", {}))
    spec = raw.get("transport")
    if spec is None:
        raise ConfigError("config is missing required field 'transport'")
    strict = bool(spec.get("strict", False))
    mu = build_measure(spec["source"], grid, strict=strict)
    nu = build_measure(spec["target"], grid, strict=strict)
    sol = solve_transport(mu, nu, h, check=False)
    sol.to_csv(out / "transport.csv")
    rec = reconstruction_error(sol, h)
    ok = abs(sol.duality_gap) <= sol.gap_tol and rec["T_l1"] <= 10 * grid.dx * opts.tol_scale
    report = {"cost": sol.cost, "duality_gap": sol.duality_gap, "gap_tol": sol.gap_tol,
              "reconstruction": rec, "passed": bool(ok)}
    write_json(out / "transport.json", report)
    return (EXIT_PASS if ok else EXIT_FAIL), report


def cmd_five_gradients(raw, opts, out: Path):
    grid = build_grid(raw.get("grid", {}))
    h = make_profile(raw.get("cost", {}))
    H = make_profile(raw.get("fisher_H", {}))
    spec = raw.get("five_gradients", {})
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    n_pairs = int(spec.get("n_pairs", 50))
    amp = float(spec.get("amplitude", 1.0))
    values = []
    for _ in range(n_pairs):
        mu = random_smooth_density(grid, rng, amplitude=amp)
        nu = random_smooth_density(grid, rng, amplitude=amp)
        values.append(five_gradients_value(mu, nu, H, h))
    tol = tol_d(grid.dx, 0.0, opts.tol_scale)
    worst = min(values)
    report = {"n_pairs": n_pairs, "min_value": worst, "worst_negative": max(0.0, -worst),
              "tol": tol, "values": values, "passed": bool(worst >= -tol)}
    write_json(out / "five_gradients.json", report)
    return (EXIT_PASS if report["passed"] else EXIT_FAIL), report


def cmd_ppower(raw, opts, out: Path):
    p = opts.p if opts.p is not None else raw.get("ppower", {}).get("p")
    if p is None:
        raise ConfigError("ppower needs --p or a [ppower] table with p")
    p = float(p)
    report = {"p": p, "C": ppower_C(p), "t_p": ppower_tp(p),
              "bound_2_2mp_over_p": ppower_lower_bound(p)}
    report["passed"] = bool(report["C"] >= report["bound_2_2mp_over_p"] - 1e-12)
    write_json(out / "ppower.json", report)
    return (EXIT_PASS if report["passed"] else EXIT_FAIL), report


def cmd_lsi_gap(raw, opts, out: Path):
    grid = build_grid(raw.get("grid", {}))
    V, eta = make_gibbs(dict(raw.get("potential", {})), grid)
    spec = raw.get("lsi", {})
    if "G" in spec:
        G = make_profile(spec["G"])
    else:
        exp = ExperimentConfig.from_dict(raw)
        G = exp.system().G
    family = spec.get("test_g", list(DEFAULT_TEST_FAMILY))
    gaps = [lsi_gap(g, eta, V, G) for g in family]
    tol = float(spec.get("tol", 1e-3)) * opts.tol_scale
    report = {"gaps": gaps, "test_g": family, "min_gap": min(gaps), "tol": tol}
    ok = min(gaps) >= -tol
    if "classical" in spec:
        c = spec["classical"]
        lim = classical_lsi_limit(float(c["Lambda"]), c.get("tau", [1.0, 0.1, 0.01, 1e-3, 1e-4]),
                                  family)
        report["classical"] = lim
        ok = ok and lim["all_monotone"] and lim["max_final_error"] <= tol
    report["passed"] = bool(ok)
    write_json(out / "lsi_gap.json", report)
    return (EXIT_PASS if ok else EXIT_FAIL), report


def cmd_theta_lsi(raw, opts, out: Path):
    spec = raw.get("theta")
    if spec is None:
        raise ConfigError("config is missing required field 'theta'")
    theta = make_modulus(spec["function"])
    sigma = make_modulus(raw.get("sigma", {}), "convexity")
    omega = make_modulus(raw.get("omega", {}), "monotonicity")
    t_max = float(spec.get("t_max", 10.0))
    l, rep = radial_theta_lsi(theta, sigma, omega, float(spec.get("C", 0.0)), t_max)
    s = np.linspace(0.0, float(theta(np.array([t_max]))[0]), 201)
    with open(out / "theta_l.csv", "w") as fh:
        fh.write("t,l\n")
        for a, b in zip(s, l(s)):
            fh.write(f"{a:.17g},{b:.17g}\n")
    rep.to_csv(out / "theta_margins.csv")
    report = rep.to_dict()
    write_json(out / "theta_lsi.json", report)
    return (EXIT_PASS if rep.passed else EXIT_FAIL), report


COMMANDS = {
    "criterion": cmd_criterion,
    "flow": cmd_flow,
    "step": cmd_step,
    "transport": cmd_transport,
    "five-gradients": cmd_five_gradients,
    "ppower": cmd_ppower,
    "lsi-gap": cmd_lsi_gap,
    "theta-lsi": cmd_theta_lsi,
}


def run_job(command: str, raw: dict, opts, out: Path):
    """Run one subcommand, mapping config and solver errors to exit code 2."""
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[command](raw, opts, out)
    except JkoSolverError as exc:
        msg = f"solver failure at step {exc.step}: {exc}"
    except DualInfeasibilityError as exc:
        msg = f"transport failure: {exc}"
    except ERRORS as exc:
        msg = f"config error: {exc}"
    log.error(msg)
    report = {"error": msg}
    write_json(out / "error.json", report)
    return EXIT_ERROR, report


def _sweep_worker(args):
    command, raw, opts, out = args
    code, _ = run_job(command, raw, opts, Path(out))
    return code


def parse_sweep(text: str):
    """``"cost.tau+ppower.tau=0.5,1,10"`` -> (["cost.tau", "ppower.tau"], [0.5, 1, 10])."""
    if "=" not in text:
        raise ConfigError(f"--sweep expects KEY=v1,v2,... got {text!r}")
    keys, vals = text.split("=", 1)
    values = [parse_scalar(v.strip()) for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError("--sweep needs at least one value")
    return keys.split("+"), values


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"otlab {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="TOML or JSON experiment description")
    ap.add_argument("--out", default="otlab_out", help="output directory (OTLAB_OUT overrides)")
    ap.add_argument("--sweep", help="KEY=v1,v2,... (KEY may join dotted paths with '+')")
    ap.add_argument("--oracle", action="store_true", help="enable brute-force cross-checks")
    ap.add_argument("--tol-scale", type=float, default=1.0)
    ap.add_argument("--p", type=float, help="exponent for the ppower subcommand")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes for --sweep")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    opts = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if opts.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(os.environ.get("OTLAB_OUT") or opts.out)
    try:
        if opts.tol_scale <= 0:
            raise ConfigError("--tol-scale must be positive")
        raw = load_config(opts.config) if opts.config else {}
        if opts.config is None and opts.command != "ppower":
            raise ConfigError(f"{opts.command} needs --config")
        sweep = parse_sweep(opts.sweep) if opts.sweep else None
    except ConfigError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_ERROR

    if sweep is None:
        code, report = run_job(opts.command, raw, opts, out)
        print(json.dumps(_jsonable({"exit": code, "passed": report.get("passed"),
                                    "error": report.get("error")}), sort_keys=True))
        return code

    keys, values = sweep
    jobs = []
    for v in values:
        cfg = raw
        for k in keys:
            cfg = set_path(cfg, k, v)
        jobs.append((opts.command, cfg, opts, str(out / f"{'+'.join(keys)}={v}")))
    with ProcessPoolExecutor(max_workers=opts.jobs) as pool:
        codes = list(pool.map(_sweep_worker, jobs))
    out.mkdir(parents=True, exist_ok=True)
    index = {"keys": keys, "values": values, "exit_codes": codes}
    write_json(out / "sweep.json", index)
    print(json.dumps(_jsonable(index), sort_keys=True))
    return max(codes)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
