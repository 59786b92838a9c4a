"""Command-line entry point: config parsing, subcommand dispatch, run dirs.

Config files are line-oriented ``key = value`` text with ``#`` comments;
flags override file keys.  Every run directory receives the fully resolved
configuration, so a run can be re-executed bit-identically (timestamps
aside).  Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .geometry import DomainSpec, build_grid, GeometryError
from .fields import GLParams, ComplexField
from .minimizer import SolverConfig, SolverFailure
from .harness import (
    ExperimentPlan,
    ResolutionPolicy,
    run_expansion_experiment,
    run_quartic_identity,
    run_linfty_scaling,
    run_curl_smallness,
    persist,
    HarnessError,
)


class ConfigError(ValueError):
    pass


# key: (type, default, help)
PLAN_KEYS = {
    "domain": (str, "disc", "domain kind (disc)"),
    "radius": (float, 1.0, "disc radius"),
    "kappa_list": (str, "25", "comma-separated kappa values"),
    "mu_list": (str, "0", "comma-separated mu values (H = kappa - mu sqrt(kappa))"),
    "res": (str, "96x256", "disc resolution n_r x n_theta"),
    "collar_nodes": (int, 8, "radial intervals inside the 2/kappa collar"),
    "tol": (float, 1e-10, "relative energy-gap tolerance of the solver"),
    "max_iter": (int, 8000, "iteration cap per stage"),
    "restarts": (int, 2, "independent starts per case"),
    "delta": (float, 0.5, "bulk-region exponent: omega = {dist >= kappa^(delta-1)}"),
    "e1": (float, float("nan"), "surface constant E1 (from surface-e1)"),
    "e2": (float, float("nan"), "bulk constant E2 (from bulk-e2)"),
    "e1_run": (str, "", "run id of the E1 measurement"),
    "e2_run": (str, "", "run id of the E2 measurement"),
    "seed": (int, 0, "random seed fixing all stochastic choices"),
    "jobs": (int, 1, "worker pool width for sweep cases"),
    "subdisc_frac": (float, 0.5, "radius fraction of the interior sub-disc"),
    "collar_depth_factor": (float, 10.0, "collar depth in units of 1/kappa"),
    "virial_target": (float, 5e-6, "per-run relative virial defect target"),
}


def parse_config(path: str | None, overrides: dict | None = None) -> dict:
    """Read ``key = value`` lines, apply overrides, reject unknown keys."""
    raw = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, val = (s.strip() for s in line.split("=", 1))
                raw[key] = val
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    cfg = {}
    for key, val in raw.items():
        if key not in PLAN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        typ = PLAN_KEYS[key][0]
        try:
            cfg[key] = typ(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: cannot parse {val!r} as {typ.__name__}") from exc
    for key, (_, default, _) in PLAN_KEYS.items():
        cfg.setdefault(key, default)
    return cfg


def _float_list(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    try:
        return [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}") from exc


def plan_from_config(cfg: dict) -> ExperimentPlan:
    if cfg["domain"] != "disc":
        raise ConfigError(f"full-domain sweeps support disc domains, got {cfg['domain']!r}")
    try:
        nr, ntheta = (int(s) for s in cfg["res"].lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"res must look like 96x256, got {cfg['res']!r}") from exc
    kappas = _float_list(cfg["kappa_list"])
    mus = _float_list(cfg["mu_list"])
    for k in kappas:
        for m in mus:
            if m >= 0.5 * math.sqrt(k):
                print(
                    f"warning: mu={m} is not small against sqrt(kappa)={math.sqrt(k):.3f}; "
                    "this leaves the near-critical regime (proceeding anyway)",
                    file=sys.stderr,
                )
    solver = SolverConfig(
        max_iter=cfg["max_iter"],
        gtol_rel=1e-12,
        gap_tol_rel=cfg["tol"],
        restarts=cfg["restarts"],
        seed=cfg["seed"],
    )
    try:
        plan = ExperimentPlan(
            domain=DomainSpec.disc(cfg["radius"]),
            kappa_list=kappas,
            mu_list=mus,
            resolution=ResolutionPolicy(n_r=nr, n_theta=ntheta, collar_nodes=cfg["collar_nodes"]),
            solver=solver,
            delta=cfg["delta"],
            e1=cfg["e1"],
            e2=cfg["e2"],
            e1_run=cfg["e1_run"],
            e2_run=cfg["e2_run"],
            seed=cfg["seed"],
            jobs=cfg["jobs"],
            subdisc_frac=cfg["subdisc_frac"],
            collar_depth_factor=cfg["collar_depth_factor"],
            virial_target=cfg["virial_target"],
        )
    except (GeometryError, HarnessError) as exc:
        raise ConfigError(str(exc)) from exc
    return plan


def _write_csv(path, rows: list[dict]):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _ensure_outdir(out: str) -> str:
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_surface_e1(args) -> int:
    from .surface_energy import estimate_E1

    ells = _float_list(args.ell)
    res = None
    if args.res:
        ns, nt = (int(s) for s in args.res.lower().split("x"))
        res = (ns, nt)
    est = estimate_E1(ells, T=args.T, resolution=res)
    out = _ensure_outdir(args.out)
    _write_csv(os.path.join(out, "surface_e1.csv"), est.table())
    summary = {
        "E1": est.e1,
        "M_fit": est.m_fit,
        "pair_estimates": est.pair_estimates,
        "residuals": est.residuals,
        "seed": args.seed,
        "version": __version__,
    }
    with open(os.path.join(out, "surface_e1.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"E1 = {est.e1:.6f} (fit slope M = {est.m_fit:.4f})")
    for row in est.table():
        print(f"  ell={row['ell']:<6g} d={row['d_ell']:<12.6f} -d/2ell={row['e1_est']:.6f}")
    return 0


def cmd_bulk_e2(args) -> int:
    from .bulk_energy import estimate_E2_lll

    N_list = [int(float(s)) for s in str(args.N).split(",")]
    est = estimate_E2_lll(N_list, resolution=args.res)
    out = _ensure_outdir(args.out)
    _write_csv(os.path.join(out, "bulk_e2.csv"), est.table)
    with open(os.path.join(out, "bulk_e2.json"), "w") as fh:
        json.dump({"E2": est.e2, "drift": est.drift, "table": est.table,
                   "version": __version__}, fh, indent=1, sort_keys=True)
    print(f"E2 = {est.e2:.6f} (drift over top two N: {est.drift:.2%})")
    for row in est.table:
        print(
            f"  N={row['N']:<3d} R={row['R']:.4f} mu1={row['mu1']:.6f} "
            f"mu2={row['mu2']:.4f} c(R)={row['cR']:.6f} beta={row['beta']:.6f}"
        )
    return 0


def cmd_bulk_e2_thermo(args) -> int:
    from .bulk_energy import estimate_E2_thermo

    rows = []
    for b in _float_list(args.b):
        est = estimate_E2_thermo(b, R_big=args.R, resolution=args.res)
        rows.append({"b": b, "g_b": est.g_b, "ratio": est.ratio})
        print(f"b={b}: g(b) = {est.g_b:.6f},  |g|/(1-b)^2 = {est.ratio:.5f}")
    out = _ensure_outdir(args.out)
    _write_csv(os.path.join(out, "bulk_e2_thermo.csv"), rows)
    return 0


def cmd_gl_min(args) -> int:
    cfg = parse_config(args.plan, _plan_overrides(args))
    if args.kappa is not None:
        cfg["kappa_list"] = str(args.kappa)
    if args.H is not None:
        kappa = _float_list(cfg["kappa_list"])[0]
        cfg["mu_list"] = str((kappa - args.H) / math.sqrt(kappa))
    if not np.isfinite(cfg["e1"]):
        cfg["e1"] = 0.0
        cfg["e2"] = 0.0
    plan = plan_from_config(cfg)
    sweep = run_expansion_experiment(plan, keep_fields=True)
    path = persist(sweep, args.out)
    grid = plan.resolution.build(plan.domain, max(plan.kappa_list))
    for (k, m), (psi, A) in sweep.fields.items():
        tag = f"k{k:g}_mu{m:g}".replace(".", "p")
        grid.snapshot_csv(
            os.path.join(path, f"fields_{tag}.csv"),
            {"psi": psi.values, "A": A.nodes},
        )
    rec = sweep.records[0]
    diag = {
        "max_abs_psi": rec.max_abs_psi,
        "curl_defect_sup": rec.curl_defect_sup,
        "l2_over_zeta": rec.l2_norm / rec.zeta,
        "linf_over_lambda": rec.linf_omega / rec.lam,
        "virial_defect": rec.virial_defect_rel,
    }
    with open(os.path.join(path, "diagnostics.json"), "w") as fh:
        json.dump(diag, fh, indent=1, sort_keys=True)
    print(f"run dir: {path}")
    print(f"E = {rec.energy_total:.6f}, converged = {rec.converged}")
    return 0 if all(r.converged for r in sweep.records) else 1


def _verify(args, reporter) -> int:
    cfg = parse_config(args.plan, _plan_overrides(args))
    plan = plan_from_config(cfg)
    sweep = run_expansion_experiment(plan)
    path = persist(sweep, args.out, extra={"experiment": reporter.__name__})
    code = reporter(sweep, path)
    frac = sweep.converged_fraction()
    print(f"converged fraction: {frac:.0%}  run dir: {path}")
    if frac < 0.8:
        print("FAIL: fewer than 80 percent of runs converged", file=sys.stderr)
        return 1
    return code


def _report_expansion(sweep, path) -> int:
    for r in sweep.records:
        print(
            f"kappa={r.kappa:g} mu={r.mu:g}: E = {r.energy_total:.4f}, "
            f"prediction = {-r.pred_all:.4f}, ratio = {r.ratio_total:.4f}"
        )
    return 0


def _report_quartic(sweep, path) -> int:
    rows = run_quartic_identity(sweep)
    _write_csv(os.path.join(path, "quartic.csv"), rows)
    for row in rows:
        print(
            f"kappa={row['kappa']:g} mu={row['mu']:g}: kappa*int|psi|^4 = "
            f"{row['kappa_quartic']:.4f}, prediction = {row['prediction']:.4f}, "
            f"ratio = {row['ratio']:.4f}, virial rel err = {row['virial_rel_err']:.2e}"
        )
    return 0


def _report_linfty(sweep, path) -> int:
    res = run_linfty_scaling(sweep)
    _write_csv(os.path.join(path, "linfty.csv"), res["rows"])
    print(f"slope = {res['slope']:.4f}, ratio range = [{res['c_lower']:.4f}, {res['C_upper']:.4f}]")
    return 0


def _report_curl(sweep, path) -> int:
    rows = run_curl_smallness(sweep)
    _write_csv(os.path.join(path, "curl.csv"), rows)
    for row in rows:
        print(
            f"kappa={row['kappa']:g} mu={row['mu']:g}: normalized curl energy = "
            f"{row['ratio']:.3e}, sup constant = {row['sup_constant']:.3f}"
        )
    return 0


def cmd_project_lll(args) -> int:
    from .fields import lll_project

    n = args.n
    spec = DomainSpec.rectangle(args.patch, args.patch)
    grid = build_grid(spec, (n, n))
    grid.xy -= 0.5 * args.patch
    z2 = grid.xy[:, 0] ** 2 + grid.xy[:, 1] ** 2
    if args.input:
        data = np.loadtxt(args.input, delimiter=",", skiprows=1)
        if data.shape[0] != grid.n_nodes:
            raise ConfigError(
                f"input has {data.shape[0]} rows; patch grid has {grid.n_nodes} nodes"
            )
        vals = data[:, 3] + 1j * data[:, 4]
    else:
        rng = np.random.default_rng(args.seed)
        vals = (rng.standard_normal(grid.n_nodes) + 1j * rng.standard_normal(grid.n_nodes))
        vals *= np.exp(-z2 / 4.0)
    f = ComplexField(grid, vals)
    Pf = lll_project(f)
    PPf = lll_project(Pf)
    idem = (
        ComplexField(grid, PPf.values - Pf.values).norm_l2()
        / max(ComplexField(grid, Pf.values).norm_l2(), 1e-300)
    )
    out = _ensure_outdir(args.out)
    grid.snapshot_csv(os.path.join(out, "lll_projection.csv"), {"f": f.values, "Pf": Pf.values})
    print(f"projected norm fraction: {Pf.norm_l2() / f.norm_l2():.6f}")
    print(f"idempotence residual: {idem:.3e}")
    return 0


def _plan_overrides(args) -> dict:
    keys = ("kappa_list", "mu_list", "res", "tol", "seed", "restarts", "e1", "e2",
            "e1_run", "e2_run", "delta", "jobs")
    return {k: getattr(args, k, None) for k in keys}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="glsurf",
        description="Ginzburg-Landau surface/bulk energy toolkit",
    )
    p.add_argument("--version", action="version", version=f"glsurf {__version__}")
    sub = p.add_subparsers(dest="command")

    def add_plan_flags(q):
        q.add_argument("--plan", help="plan config file (key = value lines)")
        q.add_argument("--out", default="runs", help="output root directory")
        q.add_argument("--kappa_list", help="override: comma-separated kappas")
        q.add_argument("--mu_list", help="override: comma-separated mus")
        q.add_argument("--res", help="override: n_r x n_theta")
        q.add_argument("--tol", help="override: solver energy-gap tolerance")
        q.add_argument("--seed", help="override: seed")
        q.add_argument("--restarts", help="override: restart count")
        q.add_argument("--e1", help="override: measured E1")
        q.add_argument("--e2", help="override: measured E2")
        q.add_argument("--e1_run", help="override: E1 run id")
        q.add_argument("--e2_run", help="override: E2 run id")
        q.add_argument("--delta", help="override: omega-region exponent")
        q.add_argument("--jobs", help="override: worker pool width")

    q = sub.add_parser("surface-e1", help="half-strip sweep measuring E1")
    q.add_argument("--ell", default="4,8,16", help="comma-separated strip half-widths")
    q.add_argument("--T", type=float, default=12.0, help="truncation height")
    q.add_argument("--res", help="strip resolution ns x nt (default from spacing)")
    q.add_argument("--out", default="runs")
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_surface_e1)

    q = sub.add_parser("bulk-e2", help="flux-cell sweep measuring E2")
    q.add_argument("--N", default="1,4,9", help="comma-separated flux integers")
    q.add_argument("--res", type=int, default=None, help="nodes per cell side")
    q.add_argument("--out", default="runs")
    q.set_defaults(func=cmd_bulk_e2)

    q = sub.add_parser("bulk-e2-thermo", help="thermodynamic-limit estimator of E2")
    q.add_argument("--b", default="0.95", help="comma-separated field ratios in (0,1)")
    q.add_argument("--R", type=float, default=20.0, help="large square side")
    q.add_argument("--res", type=int, default=None, help="nodes per side at R")
    q.add_argument("--out", default="runs")
    q.set_defaults(func=cmd_bulk_e2_thermo)

    q = sub.add_parser("gl-min", help="minimize the full GL energy once")
    add_plan_flags(q)
    q.add_argument("--domain", default="disc")
    q.add_argument("--kappa", type=float, help="single kappa")
    q.add_argument("--H", type=float, help="single H (overrides mu_list)")
    q.set_defaults(func=cmd_gl_min)

    for name, rep in (
        ("verify-expansion", _report_expansion),
        ("verify-quartic", _report_quartic),
        ("verify-linfty", _report_linfty),
        ("verify-curl", _report_curl),
    ):
        q = sub.add_parser(name, help=f"run the sweep and report ({name.split('-')[1]})")
        add_plan_flags(q)
        q.set_defaults(func=lambda a, _rep=rep: _verify(a, _rep))

    q = sub.add_parser("project-lll", help="apply the lowest-level projector on a patch")
    q.add_argument("--patch", type=float, default=20.0, help="patch side length")
    q.add_argument("--n", type=int, default=81, help="nodes per side")
    q.add_argument("--input", help="optional field CSV (x,y,weight,re,im)")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default="runs")
    q.set_defaults(func=cmd_project_lll)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, HarnessError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
