"""Config-driven experiment runs behind the command-line interface.

Every ``run_*`` function takes a resolved config (see `mfgvv.config`), writes its CSV
files and ``<name>_report.json`` under ``output.dir``, and returns the report dict.
Independent cells (one per beta, or per (beta, N, seed)) may be farmed out to a
process pool; results are assembled in cell order, so the worker count never changes
the output bytes.  Timings are logged, never written to files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import closed_form as cf
from . import svg
from .config import build_grids, build_model, build_terminal, config_hash
from .coupling import MFGProblem, solve_mfg_fictitious_play, solve_mfg_policy_iteration
from .errors import ConfigurationError, MFGError
from .fokker_planck import make_initial_density
from .grid import gradient
from .hjb import numerical_viscosity
from .metrics import loglog_slope, sup_diff, w1_grid
from .particles import empirical_w1, simulate_fbsde, simulate_nplayer

log = logging.getLogger(__name__)

SWEEP_HEADER = ["beta", "sup_u_diff", "sup_grad_diff", "w1_sup_t", "iterations", "status", "config_hash"]
RATES_HEADER = ["range", "slope", "intercept", "r_squared", "n_points", "config_hash"]
PI_HEADER = ["iteration", "hj_residual", "fp_weak_residual", "policy_change", "config_hash"]
PARTICLES_HEADER = ["N", "beta", "seed", "t", "w1_to_rho_beta", "w1_to_rho_0", "config_hash"]
ORACLE_HEADER = ["beta", "level", "n", "nt", "sup_u_error", "w1_sup_t_error", "sup_grad_error",
                 "iterations", "status", "config_hash"]
FBSDE_HEADER = ["level", "n", "nt", "paths", "decoupling_mean", "decoupling_se", "adjoint_mean",
                "bound", "config_hash"]


class AllCellsFailed(MFGError):
    """Every cell of a run failed, so there is nothing to report."""


# ---------------------------------------------------------------- output helpers

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row[h]) for h in header])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_report(out: Path, name: str, report: dict) -> None:
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2)
    (out / f"{name}_report.json").write_text(text + "\n")


def _outdir(cfg) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pool_map(fn, cells, workers: int):
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, cells))


def _check(name, value, threshold, passed) -> dict:
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def _in(v, band) -> bool:
    return band[0] <= v <= band[1]


# ---------------------------------------------------------------- solves

def make_problem(cfg, refine: int = 1) -> MFGProblem:
    grid, tgrid = build_grids(cfg, refine)
    return MFGProblem(build_model(cfg), grid, tgrid, make_initial_density(cfg["m0"], grid),
                      build_terminal(cfg))


def solve(cfg, beta: float, refine: int = 1, coupler: str | None = None):
    """Solve the configured MFG at ``beta``; first-order (``beta = 0``) runs always use fictitious play."""
    s = cfg["solver"]
    problem = make_problem(cfg, refine)
    coupler = coupler or s["coupler"]
    if coupler == "policy_iteration" and beta > 0:
        return solve_mfg_policy_iteration(problem, beta, R=s["R"], tol=s["tol"], max_iter=s["max_iter"])
    return solve_mfg_fictitious_play(problem, beta, tol=s["tol"], max_iter=s["max_iter"],
                                     damping=s["damping"], scheme=s["scheme"])


def _density_stats(sol) -> dict:
    recs = [h for h in sol.history if "mass_error" in h]
    mass = [h["mass_error"] for h in recs] + [float(np.abs(sol.rho.masses() - 1).max())]
    low = [h["min_density"] for h in recs] + [float(sol.rho.values.min())]
    return {"mass_error": max(mass), "min_density": min(low)}


def _solve_cell(args):
    cfg, beta, refine = args
    t0 = time.perf_counter()
    try:
        sol = solve(cfg, beta, refine)
    except MFGError as exc:
        log.warning("solve at beta=%g failed: %s", beta, exc)
        return {"beta": beta, "status": "failed", "iterations": 0, "error": str(exc)}
    log.info("beta=%g solved in %.2fs (%d iterations)", beta, time.perf_counter() - t0, sol.iterations)
    out = {
        "beta": beta,
        "status": "converged" if sol.converged else "failed",
        "iterations": sol.iterations,
        "u": np.array(sol.u.values),
        "rho": np.array(sol.rho.values),
        "final_gap": sol.final_gap,
        "seconds": time.perf_counter() - t0,
    }
    out.update(_density_stats(sol))
    return out


def _exact_m0(cfg):
    m0 = cfg["m0"]
    if cfg["model"]["name"] != "quadratic_mean_field" or m0.get("kind") != "gaussian":
        return None
    return float(m0["mean"]), float(m0["variance"])


# ---------------------------------------------------------------- sweep-beta

def _sweep_rows_exact(cfg, h):
    T = float(cfg["time"]["T"])
    _, sigma2 = _exact_m0(cfg)
    ts = np.linspace(0.0, T, 1001)
    rows = []
    for b in cfg["betas"]:
        rows.append({
            "beta": float(b),
            "sup_u_diff": cf.viscosity_gap_exact(b, T, 1),
            "sup_grad_diff": 0.0,
            "w1_sup_t": float(np.max(cf.w1_gap_exact(ts, b, sigma2, T))),
            "iterations": 0,
            "status": "exact",
            "config_hash": h,
        })
    return rows, {}


def _sweep_rows_grid(cfg, h, workers):
    grid, tgrid = build_grids(cfg)
    betas = [float(b) for b in cfg["betas"]]
    cells = _pool_map(_solve_cell, [(cfg, 0.0, 1)] + [(cfg, b, 1) for b in betas], workers)
    ref, results = cells[0], cells[1:]
    r = cfg["restriction"]
    restriction = None if r is None else (r["x_lo"], r["x_hi"])
    rows, extras = [], {"reference_status": ref["status"], "density": {}, "solutions": {}}
    if ref["status"] == "failed":
        log.error("the first-order reference solve failed; every row is marked failed")
    grad0 = gradient(ref["u"], grid) if ref["status"] != "failed" else None
    for res in results:
        b = res["beta"]
        row = {"beta": b, "iterations": res["iterations"], "config_hash": h}
        if res["status"] == "failed" or grad0 is None:
            row.update(sup_u_diff=float("nan"), sup_grad_diff=float("nan"), w1_sup_t=float("nan"),
                       status="failed")
        else:
            row.update(
                sup_u_diff=sup_diff(res["u"], ref["u"], restriction, grid),
                sup_grad_diff=sup_diff(gradient(res["u"], grid), grad0, restriction, grid),
                w1_sup_t=float(np.max(w1_grid(res["rho"], ref["rho"], grid))),
                status="converged",
            )
            extras["solutions"][b] = res
        rows.append(row)
        if "mass_error" in res:
            extras["density"][b] = {"mass_error": res["mass_error"], "min_density": res["min_density"]}
    if "mass_error" in ref:
        extras["density"][0.0] = {"mass_error": ref["mass_error"], "min_density": ref["min_density"]}
    extras["reference"] = ref
    return rows, extras


def _fits(rows):
    ok = sorted((r for r in rows if r["status"] != "failed" and r["beta"] > 0 and r["sup_u_diff"] > 0),
                key=lambda r: r["beta"])
    pairs = [(r["beta"], r["sup_u_diff"]) for r in ok]
    fits = {}
    if len(pairs) >= 2:
        fits["full"] = loglog_slope(pairs)
    half = pairs[: len(pairs) // 2]
    if len(half) >= 2:
        fits["half"] = loglog_slope(half)
    return fits, pairs


def _sweep_svg(out: Path, cfg, extras, fits, pairs):
    grid, tgrid = build_grids(cfg)
    sols = extras.get("solutions", {})
    ref = extras.get("reference", {})
    if sols:
        xs = grid.x.tolist()
        series_u = [(f"beta={b:g}", xs, s["u"][0].tolist()) for b, s in sorted(sols.items())]
        series_r = [(f"beta={b:g}", xs, s["rho"][-1].tolist()) for b, s in sorted(sols.items())]
        if "u" in ref:
            series_u.insert(0, ("beta=0", xs, ref["u"][0].tolist()))
            series_r.insert(0, ("beta=0", xs, ref["rho"][-1].tolist()))
        svg.plot(out / "u_initial.svg", series_u, "value function at t=0", "x", "u")
        svg.plot(out / "rho_final.svg", series_r, "density at t=T", "x", "rho")
    if "full" in fits:
        f = fits["full"]
        bs = [p[0] for p in pairs]
        line = [math.exp(f.intercept) * b**f.slope for b in bs]
        svg.plot(out / "rates.svg", [("sup |u_beta - u_0|", bs, [p[1] for p in pairs]),
                                     (f"fit slope {f.slope:.3f}", bs, line)],
                 "viscosity gap", "beta", "error", loglog=True, markers=False)


def _sweep_checks(cfg, rows, fits, extras, grid, tgrid):
    chk = cfg["check"]
    out = []
    full, half = fits.get("full"), fits.get("half")
    if "slope_full" in chk:
        v = full.slope if full else float("nan")
        out.append(_check("slope_full", v, chk["slope_full"], full is not None and _in(v, chk["slope_full"])))
    if "r_squared_min" in chk:
        v = full.r_squared if full else float("nan")
        out.append(_check("r_squared_min", v, chk["r_squared_min"], full is not None and v >= chk["r_squared_min"]))
    if "half_minus_full_min" in chk:
        ok = full is not None and half is not None
        v = half.slope - full.slope if ok else float("nan")
        out.append(_check("half_minus_full_min", v, chk["half_minus_full_min"], ok and v >= chk["half_minus_full_min"]))
    scale = grid.dx + tgrid.dt
    if "grad_diff_factor" in chk:
        v = max((r["sup_grad_diff"] for r in rows), default=float("nan"))
        bound = chk["grad_diff_factor"] * scale
        out.append(_check("grad_diff_factor", v, bound, all(r["sup_grad_diff"] <= bound for r in rows)))
    exact = _exact_m0(cfg)
    T = tgrid.T
    if exact is not None:
        ts = np.linspace(0.0, T, 1001)
        if "w1_beta2_coef" in chk:
            coef = chk["w1_beta2_coef"]
            bmax = chk.get("w1_beta2_range", 0.5)
            worst = max((float(np.max(cf.w1_gap_exact(ts, r["beta"], exact[1], T))) / r["beta"]**2
                         for r in rows if 0 < r["beta"] <= bmax), default=float("nan"))
            out.append(_check("w1_beta2_coef", worst, coef, worst <= coef))
        if "w1_exact_tol" in chk:
            dev = max((abs(r["w1_sup_t"] - float(np.max(cf.w1_gap_exact(ts, r["beta"], exact[1], T))))
                       for r in rows), default=float("nan"))
            out.append(_check("w1_exact_tol", dev, chk["w1_exact_tol"], dev <= chk["w1_exact_tol"]))
    dens = extras.get("density", {})
    if "mass_tol" in chk and dens:
        v = max(d["mass_error"] for d in dens.values())
        out.append(_check("mass_tol", v, chk["mass_tol"], v <= chk["mass_tol"]))
    if "neg_tol" in chk and dens:
        v = min(d["min_density"] for d in dens.values())
        out.append(_check("neg_tol", v, -chk["neg_tol"], v >= -chk["neg_tol"]))
    return out


def run_sweep_beta(cfg, workers: int | None = None) -> dict:
    """Viscosity gaps and their log-log rates over the configured beta list."""
    workers = workers or int(cfg["workers"])
    out = _outdir(cfg)
    h = config_hash(cfg)
    grid, tgrid = build_grids(cfg)
    if cfg["mode"] == "exact":
        rows, extras = _sweep_rows_exact(cfg, h)
    else:
        rows, extras = _sweep_rows_grid(cfg, h, workers)
    if all(r["status"] == "failed" for r in rows):
        write_csv(out / "sweep_beta.csv", SWEEP_HEADER, rows)
        raise AllCellsFailed("every beta in the sweep failed")
    fits, pairs = _fits(rows)
    write_csv(out / "sweep_beta.csv", SWEEP_HEADER, rows)
    rate_rows = [{"range": k, "slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared,
                  "n_points": f.n_points, "config_hash": h} for k, f in fits.items()]
    write_csv(out / "rates.csv", RATES_HEADER, rate_rows)
    if cfg["output"]["emit_svg"]:
        _sweep_svg(out, cfg, extras, fits, pairs)
    report = {
        "config_hash": h,
        "mode": cfg["mode"],
        "rows": rows,
        "rates": {k: {"slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared,
                      "n_points": f.n_points} for k, f in fits.items()},
        "reference_slopes": cfg["reference_slopes"],
        "numerical_viscosity": numerical_viscosity(grid, tgrid),
        "density": extras.get("density", {}),
        "checks": _sweep_checks(cfg, rows, fits, extras, grid, tgrid),
    }
    _write_report(out, "sweep_beta", report)
    return report


# ---------------------------------------------------------------- oracle-check

def _exact_fields(grid, tgrid, beta, m, sigma2):
    T = tgrid.T
    tt, xx = np.meshgrid(tgrid.t, grid.x, indexing="ij")
    u = cf.u_exact(tt, xx, beta, m, T)
    du = cf.grad_u_exact(tt, xx, beta, m, T)
    rho = cf.rho_exact(tt, xx, beta, m, sigma2, T)
    rho = rho / (rho.sum(axis=1, keepdims=True) * grid.dx)
    return u, du, rho


def self_audit(beta: float, m: float, sigma2: float, T: float, seed: int = 0, points: int = 100,
               step: float = 1e-4) -> dict:
    """Finite-difference consistency of the closed form, three invariants."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.1 * T, 0.9 * T, points)
    x = m + rng.uniform(-2.0, 2.0, points)
    ut = (cf.u_exact(t + step, x, beta, m, T) - cf.u_exact(t - step, x, beta, m, T)) / (2 * step)
    ux = (cf.u_exact(t, x + step, beta, m, T) - cf.u_exact(t, x - step, beta, m, T)) / (2 * step)
    uxx = (cf.u_exact(t, x + step, beta, m, T) - 2 * cf.u_exact(t, x, beta, m, T)
           + cf.u_exact(t, x - step, beta, m, T)) / step**2
    hj = float(np.max(np.abs(-ut + 0.5 * ux**2 - 0.5 * (x - m) ** 2 - 0.5 * beta**2 * uxx)))
    # variance ODE: the optimal drift is -u_x = -2 a(t) (x - m)
    ts = rng.uniform(0.05 * T, 0.95 * T, points)
    dv = (cf.density_variance(ts + step, beta, sigma2, T) - cf.density_variance(ts - step, beta, sigma2, T)) / (2 * step)
    rhs = -4.0 * cf.curvature_coef(ts, T) * cf.density_variance(ts, beta, sigma2, T) + beta**2
    var = float(np.max(np.abs(dv - rhs)))
    grad = float(np.max(np.abs(cf.grad_u_exact(t, x, beta, m, T) - cf.grad_u_exact(t, x, 0.0, m, T))))
    return {"hj_fd_residual": hj, "variance_ode_residual": var, "gradient_beta_dependence": grad}


def run_oracle_check(cfg, workers: int | None = None) -> dict:
    """Grid solves of the quadratic mean-field model against its closed form."""
    workers = workers or int(cfg["workers"])
    exact = _exact_m0(cfg)
    if exact is None:
        raise ConfigurationError("oracle-check needs the quadratic_mean_field model with a Gaussian m0")
    m, sigma2 = exact
    out = _outdir(cfg)
    h = config_hash(cfg)
    levels = [1, 2] if cfg["refinement"] else [1]
    cells = [(cfg, float(b), lv) for b in cfg["betas"] for lv in levels]
    results = _pool_map(_solve_cell, cells, workers)
    rows, density = [], {}
    for (_, b, lv), res in zip(cells, results):
        grid, tgrid = build_grids(cfg, lv)
        row = {"beta": b, "level": lv, "n": grid.n, "nt": tgrid.nt, "iterations": res["iterations"],
               "status": res["status"], "config_hash": h}
        if "u" in res:
            u, du, rho = _exact_fields(grid, tgrid, b, m, sigma2)
            row.update(
                sup_u_error=float(np.max(np.abs(res["u"] - u))),
                w1_sup_t_error=float(np.max(w1_grid(res["rho"], rho, grid))),
                sup_grad_error=float(np.max(np.abs(gradient(res["u"], grid) - du))),
            )
            density[f"{b:g}/{lv}"] = {"mass_error": res["mass_error"], "min_density": res["min_density"]}
        else:
            row.update(sup_u_error=float("nan"), w1_sup_t_error=float("nan"), sup_grad_error=float("nan"))
        rows.append(row)
    if all(r["status"] == "failed" for r in rows):
        write_csv(out / "oracle_check.csv", ORACLE_HEADER, rows)
        raise AllCellsFailed("every oracle-check solve failed")
    write_csv(out / "oracle_check.csv", ORACLE_HEADER, rows)
    T = float(cfg["time"]["T"])
    audits = {f"{b:g}": self_audit(float(b), m, sigma2, T) for b in cfg["betas"]}
    orders = {}
    for b in cfg["betas"]:
        pair = [r for r in rows if r["beta"] == float(b)]
        if len(pair) == 2:
            orders[f"{b:g}"] = {k: pair[0][k] / pair[1][k] for k in ("sup_u_error", "w1_sup_t_error")}
    chk, checks = cfg["check"], []
    first = [r for r in rows if r["level"] == 1]
    if "u_error_max" in chk:
        v = max(r["sup_u_error"] for r in first)
        checks.append(_check("u_error_max", v, chk["u_error_max"], v <= chk["u_error_max"]))
    if "w1_error_max" in chk:
        v = max(r["w1_sup_t_error"] for r in first)
        checks.append(_check("w1_error_max", v, chk["w1_error_max"], v <= chk["w1_error_max"]))
    if "refinement_ratio" in chk:
        for b, o in orders.items():
            for k, v in o.items():
                checks.append(_check(f"refinement_ratio[{b}].{k}", v, chk["refinement_ratio"],
                                     _in(v, chk["refinement_ratio"])))
    if "self_audit_tol" in chk:
        v = max(max(a["hj_fd_residual"], a["variance_ode_residual"]) for a in audits.values())
        checks.append(_check("self_audit_tol", v, chk["self_audit_tol"], v <= chk["self_audit_tol"]))
    report = {"config_hash": h, "rows": rows, "refinement_ratios": orders, "self_audit": audits,
              "density": density, "checks": checks}
    _write_report(out, "oracle_check", report)
    return report


# ---------------------------------------------------------------- particles

def _particle_cell(args):
    cfg, sol, ref0, beta, N, seed, dt = args
    model = build_model(cfg)
    every = int(cfg["particles"]["record_every"])
    ens = simulate_nplayer(model, sol, N, dt, seed)
    grid = sol.u.grid
    exact = _exact_m0(cfg)
    T = sol.u.tgrid.T
    rows = []
    picked = ens[::every]
    if picked[-1] is not ens[-1]:
        picked.append(ens[-1])
    for e in picked:
        if exact is not None:
            m, s2 = exact
            rb = {"mean": m, "variance": cf.density_variance(e.t, beta, s2, T)}
            r0 = {"mean": m, "variance": cf.density_variance(e.t, 0.0, s2, T)}
            w_b, w_0 = empirical_w1(e, rb), empirical_w1(e, r0)
        else:
            k = min(int(round(e.t / sol.u.tgrid.dt)), sol.u.tgrid.nt)
            w_b = empirical_w1(e, sol.rho.values[k], grid)
            w_0 = empirical_w1(e, ref0[k], grid)
        rows.append({"N": N, "beta": beta, "seed": seed, "t": e.t, "w1_to_rho_beta": w_b, "w1_to_rho_0": w_0})
    return rows


def run_particles(cfg, workers: int | None = None, seed: int | None = None) -> dict:
    """N-player simulations against the MFG density flows at ``beta`` and at zero noise."""
    workers = workers or int(cfg["workers"])
    out = _outdir(cfg)
    h = config_hash(cfg)
    p = cfg["particles"]
    betas = [float(b) for b in (p["betas"] or cfg["betas"])]
    seeds = list(p["seeds"]) if seed is None else [seed + i for i in range(len(p["seeds"]))]
    _, tgrid = build_grids(cfg)
    dt = float(p["dt"] or tgrid.dt)
    ref0 = None
    if _exact_m0(cfg) is None:
        ref0 = np.array(solve(cfg, 0.0, coupler="fictitious_play").rho.values)
    cells = []
    for b in betas:
        sol = dataclasses.replace(solve(cfg, b), problem=None)
        cells += [(cfg, sol, ref0, b, int(N), int(s), dt) for N in p["N_list"] for s in seeds]
    chunks = _pool_map(_particle_cell, cells, workers)
    rows = [dict(r, config_hash=h) for chunk in chunks for r in chunk]
    write_csv(out / "particles.csv", PARTICLES_HEADER, rows)
    summary = {}
    for b in betas:
        per_n = {}
        for N in p["N_list"]:
            sup_b, sup_0 = [], []
            for s in seeds:
                sel = [r for r in rows if r["beta"] == b and r["N"] == N and r["seed"] == s]
                sup_b.append(max(r["w1_to_rho_beta"] for r in sel))
                sup_0.append(max(r["w1_to_rho_0"] for r in sel))
            per_n[int(N)] = {"w1_to_rho_beta": float(np.mean(sup_b)), "w1_to_rho_0": float(np.mean(sup_0))}
        entry = {"by_N": per_n}
        if len(per_n) >= 2:
            entry["slope_vs_N"] = loglog_slope([(N, v["w1_to_rho_beta"]) for N, v in per_n.items()]).slope
        summary[f"{b:g}"] = entry
    if len(betas) >= 2:
        nmax = int(max(p["N_list"]))
        pts = [(b, summary[f"{b:g}"]["by_N"][nmax]["w1_to_rho_0"]) for b in betas if b > 0]
        if len(pts) >= 2:
            summary["slope_vs_beta"] = loglog_slope(pts).slope
    chk, checks = cfg["check"], []
    for b in betas:
        per_n = summary[f"{b:g}"]["by_N"]
        ns = sorted(per_n)
        v0 = [per_n[n]["w1_to_rho_0"] for n in ns]
        if chk.get("monotone_in_N"):
            checks.append(_check(f"monotone_in_N[{b:g}]", v0, "non-increasing",
                                 all(a >= c for a, c in zip(v0, v0[1:]))))
        if "ratio_min" in chk:
            ratio = v0[0] / v0[-1]
            checks.append(_check(f"ratio_min[{b:g}]", ratio, chk["ratio_min"], ratio >= chk["ratio_min"]))
        if "n_slope_max" in chk and "slope_vs_N" in summary[f"{b:g}"]:
            v = summary[f"{b:g}"]["slope_vs_N"]
            checks.append(_check(f"n_slope_max[{b:g}]", v, chk["n_slope_max"], v <= chk["n_slope_max"]))
    report = {"config_hash": h, "dt": dt, "seeds": seeds, "summary": summary, "checks": checks}
    _write_report(out, "particles", report)
    return report


# ---------------------------------------------------------------- policy iteration

def geometric_ratio(values, first: int, last: int) -> float:
    """``(r_last / r_first) ** (1 / (last - first))`` over 1-based iterations.

    The product of successive ratios telescopes, so zeros inside the window are
    harmless; a zero at the window start means the iteration had already stopped.
    """
    last = min(last, len(values))
    if last <= first:
        raise ConfigurationError(f"need iterations {first}..{last}; the run produced {len(values)}")
    a, b = values[first - 1], values[last - 1]
    if a == 0.0:
        return 0.0
    return (b / a) ** (1.0 / (last - first))


def run_policy_iteration(cfg, workers: int | None = None) -> dict:
    out = _outdir(cfg)
    h = config_hash(cfg)
    s = cfg["solver"]
    beta = float(cfg["betas"][0])
    problem = make_problem(cfg)
    grid, tgrid = problem.grid, problem.tgrid
    t0 = time.perf_counter()
    sol = solve_mfg_policy_iteration(problem, beta, R=s["R"], tol=s["tol"], max_iter=s["max_iter"])
    log.info("policy iteration: %d iterations in %.2fs", sol.iterations, time.perf_counter() - t0)
    rows = [{k: rec[k] for k in PI_HEADER[:-1]} | {"config_hash": h} for rec in sol.history]
    write_csv(out / "pi_residuals.csv", PI_HEADER, rows)
    changes = [r["policy_change"] for r in rows]
    first, last = cfg["policy"]["window"]
    report = {"config_hash": h, "beta": beta, "iterations": sol.iterations, "status": sol.status}
    try:
        report["geometric_ratio"] = geometric_ratio(changes, first, last)
    except ConfigurationError as exc:
        report["geometric_ratio"] = float("nan")
        report["window_error"] = str(exc)
    win = [(i + 1, c) for i, c in enumerate(changes) if first <= i + 1 <= last and c > 0]
    if len(win) >= 2:
        report["fitted_ratio"] = float(np.exp(np.polyfit([w[0] for w in win], np.log([w[1] for w in win]), 1)[0]))
    bound = 10.0 * (grid.dx + tgrid.dt)
    if cfg["policy"]["compare_fictitious_play"]:
        fp = solve_mfg_fictitious_play(problem, beta, tol=s.get("fp_tol", 1e-6), max_iter=200,
                                       damping=s["damping"])
        report["fictitious_play_u_diff"] = sup_diff(sol.u, fp.u)
        report["fictitious_play_bound"] = bound
    chk, checks = cfg["check"], []
    if "ratio_max" in chk:
        v = report["geometric_ratio"]
        checks.append(_check("ratio_max", v, chk["ratio_max"], v <= chk["ratio_max"]))
    if "fp_agreement_factor" in chk and "fictitious_play_u_diff" in report:
        b = chk["fp_agreement_factor"] * (grid.dx + tgrid.dt)
        v = report["fictitious_play_u_diff"]
        checks.append(_check("fp_agreement_factor", v, b, v <= b))
    report["checks"] = checks
    _write_report(out, "policy_iteration", report)
    return report


# ---------------------------------------------------------------- fbsde

def run_fbsde(cfg, workers: int | None = None, seed: int | None = None) -> dict:
    """Seed-averaged decoupling residuals of the FBSDE at two grid levels."""
    out = _outdir(cfg)
    h = config_hash(cfg)
    beta = float(cfg["betas"][0])
    f = cfg["fbsde"]
    seed = int(cfg["particles"]["seeds"][0] if seed is None else seed)
    exact = _exact_m0(cfg)
    grad_ref = None
    if exact is not None:
        T = float(cfg["time"]["T"])
        grad_ref = lambda t, x: cf.grad_u_exact(t, x, beta, exact[0], T)  # noqa: E731
    model = build_model(cfg)
    rows = []
    for lv in (1, 2):
        sol = solve(cfg, beta, lv)
        grid, tgrid = sol.u.grid, sol.u.tgrid
        path = simulate_fbsde(model, sol, f["x0"], tgrid.dt, seed, n_paths=int(f["paths"]), grad_ref=grad_ref)
        d = path.decoupling_sup
        se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
        rows.append({"level": lv, "n": grid.n, "nt": tgrid.nt, "paths": d.size,
                     "decoupling_mean": float(d.mean()), "decoupling_se": se,
                     "adjoint_mean": float(path.adjoint_sup.mean()),
                     "bound": 10.0 * (grid.dx + tgrid.dt), "config_hash": h})
    write_csv(out / "fbsde.csv", FBSDE_HEADER, rows)
    ratio = rows[0]["decoupling_mean"] / rows[1]["decoupling_mean"] if rows[1]["decoupling_mean"] > 0 else float("inf")
    chk, checks = cfg["check"], []
    if "residual_factor" in chk:
        for r in rows:
            b = chk["residual_factor"] * (r["bound"] / 10.0) + chk.get("se_factor", 0.0) * r["decoupling_se"]
            checks.append(_check(f"residual[{r['level']}]", r["decoupling_mean"], b, r["decoupling_mean"] <= b))
    if "halving_tol" in chk:
        tol = chk["halving_tol"]
        checks.append(_check("halving", ratio, [2 * (1 - tol), 2 * (1 + tol)], abs(ratio - 2.0) <= 2.0 * tol))
    report = {"config_hash": h, "beta": beta, "seed": seed, "rows": rows, "refinement_ratio": ratio,
              "observed_order": math.log2(ratio) if 0 < ratio < float("inf") else float("nan"),
              "checks": checks}
    _write_report(out, "fbsde", report)
    return report


RUNS = {
    "sweep-beta": run_sweep_beta,
    "oracle-check": run_oracle_check,
    "particles": run_particles,
    "policy-iteration": run_policy_iteration,
    "fbsde": run_fbsde,
}
