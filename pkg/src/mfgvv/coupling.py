"""Fixed-point solvers for the coupled HJ / Fokker-Planck system.

Two couplers are provided:

* `solve_mfg_fictitious_play`: damped best-response iteration on the density flow,
  ``rho <- (1 - delta_k) rho + delta_k FP(HJB(rho))``.
* `solve_mfg_policy_iteration`: alternate policy evaluation (linear FP and HJ solves
  for a frozen policy) with pointwise policy improvement.

Policy sign convention: a policy ``q`` moves agents with velocity ``-q`` (see
`mfgvv.fokker_planck.POLICY_SIGN`), so the optimal policy is
``q = -dH/dp(x, -u_x, rho)``.  For Hamiltonians even in ``p`` this equals
``dH/dp(x, u_x, rho)``, the maximiser of ``q u_x - L(x, q, rho)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .fokker_planck import POLICY_SIGN, solve_fp, solve_fp_policy
from .grid import (
    DensityTrajectory,
    SpaceTimeField,
    SpatialGrid,
    TimeGrid,
    gradient,
    laplacian,
    one_sided_slopes,
)
from .hamiltonian import HamiltonianModel
from .hjb import lax_friedrichs_hamiltonian, lf_theta, solve_hjb, solve_hjb_linear
from .metrics import w1_grid

log = logging.getLogger(__name__)

DEFAULT_R = 5.0


@dataclass
class MFGProblem:
    """Model data shared by both couplers."""

    model: HamiltonianModel
    grid: SpatialGrid
    tgrid: TimeGrid
    m0: np.ndarray
    g: np.ndarray | Callable | None = None

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, dtype=float)

    def terminal(self, rho_T) -> np.ndarray:
        """Terminal cost slice ``g(x, rho_T)``."""
        if self.g is None:
            return np.zeros(self.grid.n)
        if callable(self.g):
            return np.asarray(self.g(self.grid.x, rho_T), dtype=float)
        return np.asarray(self.g, dtype=float)

    def best_response(self, rho, beta: float, scheme: str = "local"):
        """One HJB solve against ``rho`` followed by the FP solve it induces."""
        rho_v = rho.values if isinstance(rho, SpaceTimeField) else np.asarray(rho)
        u = solve_hjb(self.model, rho_v, self.terminal(rho_v[-1]), beta, self.grid, self.tgrid,
                      scheme=scheme)
        return u, solve_fp(self.model, u, self.m0, beta, self.grid, self.tgrid, scheme=scheme)


@dataclass
class PolicyField:
    q: SpaceTimeField
    R: float

    def __post_init__(self):
        if np.any(np.abs(self.q.values) > self.R * (1 + 1e-12)):
            raise ConfigurationError(f"policy exceeds its bound R={self.R}")


@dataclass
class MFGSolution:
    u: SpaceTimeField
    rho: DensityTrajectory
    beta: float
    iterations: int
    history: list = field(default_factory=list)
    status: str = "converged"
    problem: MFGProblem | None = None
    policies: list = field(default_factory=list)
    scheme: str = "local"

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def final_gap(self) -> float:
        return self.history[-1]["gap"] if self.history else float("nan")


def _damping(schedule, k: int) -> float:
    if schedule == "harmonic":
        return 1.0 / (k + 1)
    d = float(schedule)
    if not 0 < d <= 1:
        raise ConfigurationError(f"fixed damping must lie in (0, 1], got {d}")
    return d


def solve_mfg_fictitious_play(problem: MFGProblem, beta: float, tol: float = 1e-6,
                              max_iter: int = 200, damping="harmonic", rho_init=None,
                              scheme: str = "local") -> MFGSolution:
    """Damped fictitious play on the density flow.

    The first iterate is ``m0`` frozen in time unless ``rho_init`` is given.
    Iteration stops when ``sup_t W1`` between successive iterates is at most ``tol``.
    Exhausting ``max_iter`` returns the last iterate with ``status="max_iter"``.
    History records also carry the mass error and minimum of each best-response density.
    """
    grid, tgrid = problem.grid, problem.tgrid
    if rho_init is None:
        rho = np.tile(problem.m0, (tgrid.nt + 1, 1))
    else:
        rho = np.array(rho_init.values if isinstance(rho_init, SpaceTimeField) else rho_init,
                       dtype=float)
    history = []
    status = "max_iter"
    for k in range(max_iter):
        _, br = problem.best_response(rho, beta, scheme)
        delta = _damping(damping, k)
        new = (1.0 - delta) * rho + delta * br.values
        gap = float(np.max(w1_grid(new, rho, grid)))
        history.append({
            "iteration": k + 1,
            "gap": gap,
            "damping": delta,
            "mass_error": float(np.abs(br.masses() - 1.0).max()),
            "min_density": float(br.values.min()),
        })
        rho = new
        if gap <= tol:
            status = "converged"
            break
    if status != "converged":
        log.warning("fictitious play stopped after %d iterations (gap %.3e)", max_iter, gap)
    rho_traj = DensityTrajectory(rho, grid, tgrid, beta=beta)
    u = solve_hjb(problem.model, rho, problem.terminal(rho[-1]), beta, grid, tgrid, scheme=scheme)
    return MFGSolution(u, rho_traj, beta, len(history), history, status, problem, scheme=scheme)


def improve_policy(model: HamiltonianModel, u, rho, grid: SpatialGrid, R: float) -> np.ndarray:
    """Pointwise ``argmax_{|q| <= R} (q u_x - L(x, -q, rho))``.

    The objective is concave in ``q`` with unconstrained maximiser
    ``-dH/dp(x, -u_x, rho)``; in 1-D clipping to ``[-R, R]`` gives the constrained one.
    """
    uv = u.values if isinstance(u, SpaceTimeField) else np.asarray(u)
    rv = rho.values if isinstance(rho, SpaceTimeField) else np.asarray(rho)
    du = gradient(uv, grid)
    q = np.empty_like(uv)
    for k in range(uv.shape[0]):
        mu = model.summarize(rv[k], grid)
        q[k] = POLICY_SIGN * model.grad_p(grid.x, -du[k], mu)
    return np.clip(q, -R, R)


def solve_mfg_policy_iteration(problem: MFGProblem, beta: float, R: float = DEFAULT_R,
                               q0=None, tol: float = 1e-8, max_iter: int = 50) -> MFGSolution:
    """Policy iteration: FP under ``q^n``, linear HJ under ``q^n``, then improve.

    Stops when ``sup |q^{n+1} - q^n| <= tol``.  Each history record carries
    ``iteration``, ``hj_residual``, ``fp_weak_residual`` and ``policy_change``.

    Raises
    ------
    ConfigurationError
        for ``beta = 0`` (policy evaluation is ill-posed without diffusion) or an
        initial policy exceeding ``R``.
    """
    if not beta > 0:
        raise ConfigurationError("policy iteration needs beta > 0; the first-order problem is ill-posed for it")
    grid, tgrid, model = problem.grid, problem.tgrid, problem.model
    shape = (tgrid.nt + 1, grid.n)
    q = np.zeros(shape) if q0 is None else np.array(
        q0.values if isinstance(q0, SpaceTimeField) else q0, dtype=float) * np.ones(shape)
    if np.any(np.abs(q) > R):
        raise ConfigurationError(f"initial policy exceeds R={R}")
    policies = [PolicyField(SpaceTimeField(q, grid, tgrid, beta), R)]
    history = []
    status = "max_iter"
    for n in range(max_iter):
        rho = solve_fp_policy(q, problem.m0, beta, grid, tgrid)
        u = solve_hjb_linear(model, q, rho, problem.terminal(rho.values[-1]), beta, R, grid, tgrid)
        q_new = improve_policy(model, u, rho, grid, R)
        change = float(np.abs(q_new - q).max())
        history.append({
            "iteration": n + 1,
            "hj_residual": hj_residual(model, u, rho),
            "fp_weak_residual": fp_weak_residual(model, u, rho, problem.m0),
            "policy_change": change,
            "gap": change,
        })
        q = q_new
        policies.append(PolicyField(SpaceTimeField(q, grid, tgrid, beta), R))
        if change <= tol:
            status = "converged"
            break
    if status != "converged":
        log.warning("policy iteration stopped after %d iterations (change %.3e)", max_iter, change)
    return MFGSolution(u, rho, beta, len(history), history, status, problem, policies)


def hj_residual(model: HamiltonianModel, u, rho, scheme: str = "local") -> float:
    """``sup |-D_t u + H_LF(x, -Du, rho) - (beta^2/2) Lap_h u|`` over interior nodes.

    Uses the stencils of `mfgvv.hjb.solve_hjb`: the Lax-Friedrichs Hamiltonian at
    level ``k+1`` and the implicit Laplacian at level ``k``.  Truncated grids skip the
    two end cells.
    """
    grid, tgrid = u.grid, u.tgrid
    uv, rv = u.values, rho.values
    beta = u.beta
    x = grid.x
    worst = 0.0
    for k in range(tgrid.nt):
        mu = model.summarize(rv[k + 1], grid)
        pm, pp = one_sided_slopes(uv[k + 1], grid)
        theta = lf_theta(model, x, pm, pp, mu, grid, tgrid, scheme)
        h = lax_friedrichs_hamiltonian(model, x, pm, pp, mu, theta)
        r = -(uv[k + 1] - uv[k]) / tgrid.dt + h - 0.5 * beta**2 * laplacian(uv[k], grid)
        if not grid.periodic:
            r = r[1:-1]
        worst = max(worst, float(np.abs(r).max()))
    return worst


def _bump(x, c, w, grid: SpatialGrid):
    """``cos^4`` bump of radius ``w`` about ``c`` and its first two derivatives (C^3, compact)."""
    z = x - c
    if grid.periodic:
        z = z - grid.length * np.round(z / grid.length)
    r = z / w
    inside = np.abs(r) < 1
    k = np.pi / (2 * w)
    cs, sn = np.cos(k * z), np.sin(k * z)
    phi = np.where(inside, cs**4, 0.0)
    d1 = np.where(inside, -4 * cs**3 * sn * k, 0.0)
    d2 = np.where(inside, (12 * cs**2 * sn**2 - 4 * cs**4) * k**2, 0.0)
    return phi, d1, d2


def weak_test_bumps(grid: SpatialGrid, count: int = 5):
    """Centres and radius of the compactly supported test bumps used by the weak residual."""
    L = grid.length
    w = L / 8 if grid.periodic else L / 10
    lo, hi = grid.x_min + (0 if grid.periodic else 1.5 * w), grid.x_max - (0 if grid.periodic else 1.5 * w)
    centres = np.linspace(lo, hi, count + (1 if grid.periodic else 0))[:count]
    return centres, w


def fp_weak_residual(model: HamiltonianModel, u, rho, m0=None, count: int = 5) -> float:
    """Largest weak-form defect of the FP equation over ``count`` test functions.

    Each test function is ``phi(t, x) = (1 + t / T) psi(x)`` with ``psi`` a compact bump;
    the defect is::

        | int phi(T) drho_T - int phi(0) dm0
          - int int [phi_t + b phi_x + (beta^2/2) phi_xx] drho dt |

    with ``b = dH/dp(x, -u_x, rho_t)`` from central differences and trapezoidal time
    quadrature.
    """
    grid, tgrid = rho.grid, rho.tgrid
    rv = rho.values
    uv = u.values if isinstance(u, SpaceTimeField) else np.asarray(u)
    beta = rho.beta
    m0 = rv[0] if m0 is None else np.asarray(m0, dtype=float)
    x, dx, T = grid.x, grid.dx, tgrid.T
    du = gradient(uv, grid)
    b = np.empty_like(uv)
    for k in range(uv.shape[0]):
        b[k] = model.grad_p(x, -du[k], model.summarize(rv[k], grid))
    wts = np.full(tgrid.nt + 1, tgrid.dt)
    wts[0] = wts[-1] = 0.5 * tgrid.dt
    trel = tgrid.t / T
    worst = 0.0
    centres, w = weak_test_bumps(grid, count)
    for c in centres:
        psi, d1, d2 = _bump(x, c, w, grid)
        a = 1.0 + trel  # time factor
        integrand = (psi[None, :] / T + a[:, None] * (b * d1[None, :] + 0.5 * beta**2 * d2[None, :])) * rv
        rhs = np.sum(wts * integrand.sum(axis=1) * dx)
        lhs = 2.0 * np.sum(psi * rv[-1]) * dx - np.sum(psi * m0) * dx
        worst = max(worst, abs(lhs - rhs))
    return float(worst)


def fixed_point_gap(solution: MFGSolution) -> float:
    """``sup_t W1(rho, FP(HJB(rho)))`` for a solution carrying its problem."""
    problem = solution.problem
    if problem is None:
        raise ConfigurationError("solution does not carry its problem data")
    _, br = problem.best_response(solution.rho, solution.beta, solution.scheme)
    return float(np.max(w1_grid(br.values, solution.rho.values, problem.grid)))


def residuals(solution: MFGSolution, model: HamiltonianModel | None = None) -> dict:
    model = model or solution.problem.model
    m0 = solution.problem.m0 if solution.problem is not None else None
    rec = {
        "hj_residual": hj_residual(model, solution.u, solution.rho, solution.scheme),
        "fp_weak_residual": fp_weak_residual(model, solution.u, solution.rho, m0),
    }
    rec["fixed_point_gap"] = fixed_point_gap(solution) if solution.problem is not None else float("nan")
    return rec
