"""Shared descent engine for the toolkit's discrete energies.

Preconditioned Polak-Ribiere nonlinear conjugate gradient with an Armijo
backtracking line search (first trial refined by quadratic interpolation, so
quadratic model problems terminate in about `dim` iterations).  Accepted
steps are monotone by construction; a seeded multi-restart wrapper returns
the best of k independent runs.  A plain gradient-flow mode is kept as a
slow-but-simple fallback and as an independent oracle for cross-checks.

Problems are duck-typed: they expose ``energy(x)``, ``gradient(x)``,
``random_init(rng)`` and optionally ``precond_diag()`` over a flat float64
vector of unknowns.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np


class SolverFailure(RuntimeError):
    pass


@dataclass
class SolverConfig:
    """Descent-engine settings.

    Convergence is declared when the Euclidean norm of the packed gradient
    falls below max(gtol_abs, gtol_rel * initial_norm).  ``restarts`` counts
    independent starts (the provided init is the first); ``method`` is
    ``"ncg"`` or ``"flow"``.
    """

    max_iter: int = 2000
    gtol_rel: float = 1e-8
    gtol_abs: float = 0.0
    gap_tol_rel: float = 0.0
    gap_tol_abs: float = 0.0
    stall_window: int = 0
    stall_tol_rel: float = 0.0
    restarts: int = 1
    seed: int = 0
    method: str = "ncg"
    use_precond: bool = True
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    step_growth: float = 1.5
    max_backtracks: int = 40
    cg_restart_period: int = 0  # 0: rely on the automatic PR+ restart only
    history_cap: int = 512

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.gtol_rel <= 0 and self.gtol_abs <= 0 and self.gap_tol_rel <= 0 and self.gap_tol_abs <= 0:
            raise ValueError("need a positive gradient or energy-gap tolerance")


@dataclass
class ConvergenceReport:
    iterations: int
    energy: float
    grad_norm: float
    converged: bool
    energy_history: list = field(default_factory=list)
    wall_time: float = 0.0
    best_restart: int = 0
    restart_energies: list = field(default_factory=list)
    n_evals: int = 0
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _decimate(hist: list, cap: int) -> list:
    if len(hist) <= cap:
        return list(hist)
    idx = np.unique(np.linspace(0, len(hist) - 1, cap).astype(int))
    return [hist[i] for i in idx]


def _make_preconditioner(problem, cfg: SolverConfig):
    """Identity, diagonal, or operator preconditioner per problem support."""
    if not cfg.use_precond:
        return lambda v: v
    if hasattr(problem, "precond_apply"):
        return problem.precond_apply
    if hasattr(problem, "precond_diag"):
        diag = np.asarray(problem.precond_diag(), dtype=float)
        floor = 1e-14 * float(diag.max()) if diag.size else 1.0
        minv = 1.0 / np.maximum(diag, floor)
        return lambda v: v * minv
    return lambda v: v


def _line_search(problem, x, E0, g, d, t0, cfg):
    """Monotone Armijo search along d; returns (t, x_new, E_new, evals)."""
    slope = float(np.dot(g, d))
    if not slope < 0:
        return None
    t = t0
    evals = 0
    best = None
    for _ in range(cfg.max_backtracks):
        x_try = x + t * d
        E_try = problem.energy(x_try)
        evals += 1
        if np.isfinite(E_try) and E_try <= E0 + cfg.armijo_c1 * t * slope:
            best = (t, x_try, E_try)
            break
        # quadratic interpolation of phi(t) through phi(0), phi'(0), phi(t)
        if np.isfinite(E_try):
            denom = 2.0 * (E_try - E0 - slope * t)
            t_q = -slope * t * t / denom if denom > 0 else cfg.backtrack * t
            t = min(max(t_q, 0.1 * t), cfg.backtrack * t)
        else:
            t = cfg.backtrack * t
        if t <= 0 or not np.isfinite(t):
            return None
    if best is None:
        return None
    t, x_new, E_new = best
    # one interpolation refinement: exact for quadratic energies
    denom = 2.0 * (E_new - E0 - slope * t)
    if denom > 0:
        t_q = -slope * t * t / denom
        if 0 < t_q and abs(t_q - t) > 1e-12 * t:
            x_q = x + t_q * d
            E_q = problem.energy(x_q)
            evals += 1
            if np.isfinite(E_q) and E_q < E_new:
                t, x_new, E_new = t_q, x_q, E_q
    return t, x_new, E_new, evals


def _run_single(problem, x0, cfg: SolverConfig):
    x = np.array(x0, dtype=float)
    E = problem.energy(x)
    if not np.isfinite(E):
        raise SolverFailure("non-finite energy at the initial point")
    g = problem.gradient(x)
    gnorm0 = float(np.linalg.norm(g))
    tol = max(cfg.gtol_abs, cfg.gtol_rel * gnorm0)
    precondition = _make_preconditioner(problem, cfg)

    hist = [E]
    n_evals = 1
    pg = precondition(g)
    d = -pg
    gTpg = float(np.dot(g, pg))
    t_prev = None
    it = 0
    message = "converged"

    def gap_ok():
        # 0.5 g^T M^-1 g estimates the remaining energy gap (diagonal model)
        if cfg.gap_tol_rel <= 0 and cfg.gap_tol_abs <= 0:
            return False
        gap = 0.5 * gTpg
        return gap <= max(cfg.gap_tol_abs, cfg.gap_tol_rel * abs(E))

    def stalled():
        # flat-tail landscapes: declare convergence when a full window of
        # accepted steps no longer moves the energy at the stated scale
        if cfg.stall_window <= 0 or len(hist) <= cfg.stall_window:
            return False
        drop = hist[-cfg.stall_window - 1] - hist[-1]
        return drop <= cfg.stall_tol_rel * abs(E)

    while it < cfg.max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol or gap_ok():
            break
        if stalled():
            message = "stalled (energy flat over the stall window)"
            break
        slope = float(np.dot(g, d))
        if slope >= 0:
            d = -pg
            slope = -gTpg
        dnorm = float(np.linalg.norm(d))
        if t_prev is None:
            t0 = 1.0 / dnorm if dnorm > 0 else 1.0
        else:
            # grow from the last accepted step but never start below the
            # direction's own scale: soft modes need room after a run of
            # short stiff-mode steps
            t0 = max(t_prev * cfg.step_growth, 0.1 / dnorm if dnorm > 0 else 1.0)
        res = _line_search(problem, x, E, g, d, t0, cfg)
        if res is None:
            if np.array_equal(d, -pg):
                message = "line search failed"
                break
            d = -pg
            dnorm = float(np.linalg.norm(d))
            res = _line_search(problem, x, E, g, d, 1.0 / dnorm if dnorm > 0 else 1.0, cfg)
            if res is None:
                message = "line search failed"
                break
        t, x, E, evals = res
        n_evals += evals
        t_prev = t
        hist.append(E)
        g_new = problem.gradient(x)
        if not np.all(np.isfinite(g_new)):
            message = "non-finite gradient; returning last valid iterate"
            break
        pg_new = precondition(g_new)
        gTpg_new = float(np.dot(g_new, pg_new))
        beta = float(np.dot(g_new - g, pg_new)) / gTpg if gTpg > 0 else 0.0
        beta = max(beta, 0.0)  # PR+: nonpositive beta restarts the direction
        if cfg.cg_restart_period > 0 and (it + 1) % cfg.cg_restart_period == 0:
            beta = 0.0
        d = -pg_new + beta * d
        g, pg, gTpg = g_new, pg_new, gTpg_new
        it += 1
    else:
        message = "max iterations reached"
    gnorm = float(np.linalg.norm(g))
    return x, ConvergenceReport(
        iterations=it,
        energy=E,
        grad_norm=gnorm,
        converged=(gnorm <= tol) or gap_ok() or stalled(),
        energy_history=hist,
        n_evals=n_evals,
        message=message,
    )


def _run_flow(problem, x0, cfg: SolverConfig):
    """Preconditioned gradient flow with adaptive step: simple, monotone."""
    x = np.array(x0, dtype=float)
    E = problem.energy(x)
    g = problem.gradient(x)
    gnorm0 = float(np.linalg.norm(g))
    tol = max(cfg.gtol_abs, cfg.gtol_rel * gnorm0)
    precondition = _make_preconditioner(problem, cfg)
    dt = 1.0
    hist = [E]
    it = 0
    message = "converged"
    while it < cfg.max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            break
        step = precondition(g)
        accepted = False
        for _ in range(cfg.max_backtracks):
            x_try = x - dt * step
            E_try = problem.energy(x_try)
            if np.isfinite(E_try) and E_try <= E:
                x, E = x_try, E_try
                dt *= 1.2
                accepted = True
                break
            dt *= 0.5
        if not accepted:
            message = "step collapse"
            break
        hist.append(E)
        g = problem.gradient(x)
        if not np.all(np.isfinite(g)):
            message = "non-finite gradient; returning last valid iterate"
            break
        it += 1
    else:
        message = "max iterations reached"
    gnorm = float(np.linalg.norm(g))
    return x, ConvergenceReport(
        iterations=it,
        energy=E,
        grad_norm=gnorm,
        converged=gnorm <= tol,
        energy_history=hist,
        message=message,
    )


def minimize(problem, init: np.ndarray | None = None, config: SolverConfig | None = None):
    """Minimize a differentiable energy; best of ``config.restarts`` runs.

    The provided init seeds the first run; further restarts draw from
    ``problem.random_init`` with seeds ``config.seed + restart``.  Identical
    (problem, init, config) produce identical iterates.
    """
    cfg = config or SolverConfig()
    runner = _run_flow if cfg.method == "flow" else _run_single
    best_x, best_rep, energies = None, None, []
    t_start = time.monotonic()
    for r in range(max(cfg.restarts, 1)):
        if r == 0 and init is not None:
            x0 = np.asarray(init, dtype=float)
        else:
            x0 = problem.random_init(np.random.default_rng(cfg.seed + r))
        x, rep = runner(problem, x0, cfg)
        energies.append(rep.energy)
        if best_rep is None or rep.energy < best_rep.energy:
            best_x, best_rep = x, rep
            best_rep.best_restart = r
    best_rep.restart_energies = energies
    best_rep.wall_time = time.monotonic() - t_start
    best_rep.energy_history = _decimate(best_rep.energy_history, cfg.history_cap)
    return best_x, best_rep


def default_init(kind: str, grid, params=None, seed: int = 0, surface_profile=None,
                 noise: float = 0.05):
    """Seeded initial fields for the standard problem kinds.

    ``"gl"``: the boundary trial state (solved at a matched half-strip width
    if no profile is supplied) plus small seeded noise, with max|psi| clamped
    to 1; the gauge field starts at F.  ``"cell"`` / ``"halfstrip"``: seeded
    complex Gaussian noise.  Deterministic for fixed seed.
    """
    from .fields import ComplexField
    rng = np.random.default_rng(seed)
    n = grid.n_nodes
    noise_vals = noise * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    if kind in ("cell", "halfstrip"):
        return ComplexField(grid, noise_vals)
    if kind != "gl":
        raise ValueError(f"unknown init kind {kind!r}")
    from .surface_energy import boundary_trial, matched_halfstrip_profile

    if surface_profile is None:
        surface_profile = matched_halfstrip_profile(params, grid.spec)
    trial = boundary_trial(params, grid, profile=surface_profile)
    vals = trial.values + noise_vals
    mag = np.abs(vals)
    over = mag > 1.0
    vals[over] /= mag[over]
    return ComplexField(grid, vals)
