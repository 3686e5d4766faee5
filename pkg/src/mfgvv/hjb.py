"""Backward solver for ``-u_t + H(x, -u_x, rho_t) = (beta^2/2) u_xx``, ``u(T) = g``.

Each step from ``t_{k+1}`` to ``t_k`` is split into an explicit monotone
Lax-Friedrichs Hamiltonian step and a backward-Euler diffusion step.  The
Hamiltonian is always called at momentum ``-u_x``: the one-sided slopes of ``u``
are negated before every ``H`` call.

On truncated domains the diffusion step uses a linearly extrapolated ghost cell
rather than the Neumann ghost of the density solver.  A Neumann condition would
force ``u_x = 0`` at the ends, which the quadratically growing value functions
of interest violate by O(1).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DivergenceError, StructuralError
from .grid import ImplicitDiffusion, SpaceTimeField, SpatialGrid, TimeGrid, one_sided_slopes
from .hamiltonian import HamiltonianModel

CFL_MAX = 0.9
LF_MARGIN = 1.1


def _summaries(model: HamiltonianModel, rho, grid: SpatialGrid):
    vals = rho.values if isinstance(rho, SpaceTimeField) else np.asarray(rho, dtype=float)
    return [model.summarize(vals[k], grid) for k in range(vals.shape[0])]


def _check_inputs(rho, g, grid: SpatialGrid, tgrid: TimeGrid):
    shape = (tgrid.nt + 1, grid.n)
    vals = rho.values if isinstance(rho, SpaceTimeField) else np.asarray(rho, dtype=float)
    if vals.shape != shape:
        raise StructuralError(f"density shape {vals.shape} does not match grids {shape}")
    g = np.asarray(g, dtype=float)
    if g.shape != (grid.n,):
        raise StructuralError(f"terminal slice has shape {g.shape}, expected {(grid.n,)}")
    return g


def lax_friedrichs_hamiltonian(model, x, pm, pp, mu, theta):
    """``H(x, -(p- + p+)/2, mu) - theta (p+ - p-) / 2`` for slopes ``pm, pp`` of u."""
    return model.H(x, -0.5 * (pm + pp), mu) - 0.5 * theta * (pp - pm)


def dissipation(model, x, pm, pp, mu) -> float:
    """Largest ``|dH/dp|`` over the slopes present at this level (convex ``H``)."""
    a = np.abs(model.grad_p(x, -pm, mu))
    b = np.abs(model.grad_p(x, -pp, mu))
    return float(max(a.max(), b.max()))


def lf_theta(model, x, pm, pp, mu, grid: SpatialGrid, tgrid: TimeGrid, scheme: str = "local"):
    """Dissipation coefficient and the CFL check for one level.

    ``"local"``: 1.1 times the largest ``|dH/dp|`` at this level.  ``"classic"``: the
    Lax-Friedrichs value ``dx / dt``, whose numerical viscosity is ``dx^2 / (2 dt)``,
    i.e. an effective noise ``sqrt(2 dx^2 / dt)``.
    """
    dt, dx = tgrid.dt, grid.dx
    speed = dissipation(model, x, pm, pp, mu)
    if dt * speed / dx > CFL_MAX:
        raise ConfigurationError(
            f"CFL violated: dt={dt:.4g} > admissible {CFL_MAX * dx / speed:.4g}"
        )
    if scheme == "local":
        return LF_MARGIN * speed
    if scheme == "classic":
        return dx / dt
    raise ConfigurationError(f"unknown scheme {scheme!r}")


def numerical_viscosity(grid: SpatialGrid, tgrid: TimeGrid) -> float:
    """``sqrt(2 dx^2 / dt)``, the noise level mimicked by the classic scheme."""
    return float(np.sqrt(2.0 * grid.dx**2 / tgrid.dt))


def solve_hjb(model: HamiltonianModel, rho, g, beta: float, grid: SpatialGrid,
              tgrid: TimeGrid, summaries=None, scheme: str = "local") -> SpaceTimeField:
    """March the HJ equation backward from ``u(T) = g`` given the density flow ``rho``.

    ``summaries`` may carry precomputed `MeasureSummary` objects, one per time level.
    ``scheme`` selects the dissipation, see `lf_theta`.

    Raises
    ------
    ConfigurationError
        if ``dt * max|dH/dp| / dx`` exceeds 0.9 at some level.
    DivergenceError
        if a non-finite value appears.
    """
    g = _check_inputs(rho, g, grid, tgrid)
    if beta < 0:
        raise ConfigurationError("beta must be nonnegative")
    if summaries is None:
        summaries = _summaries(model, rho, grid)
    dt, x = tgrid.dt, grid.x
    diffuse = ImplicitDiffusion(grid, 0.5 * beta**2 * dt, boundary="linear")
    u = np.empty((tgrid.nt + 1, grid.n))
    u[-1] = g
    for k in range(tgrid.nt - 1, -1, -1):
        mu = summaries[k + 1]
        pm, pp = one_sided_slopes(u[k + 1], grid)
        theta = lf_theta(model, x, pm, pp, mu, grid, tgrid, scheme)
        hhat = lax_friedrichs_hamiltonian(model, x, pm, pp, mu, theta)
        u[k] = diffuse(u[k + 1] - dt * hhat)
        if not np.all(np.isfinite(u[k])):
            raise DivergenceError("non-finite value function", step=k)
    return SpaceTimeField(u, grid, tgrid, beta=beta)


def upwind_derivative(u, q, grid: SpatialGrid) -> np.ndarray:
    """Upwind ``u_x`` for the backward transport ``u_tau + q u_x``: backward slope where q > 0."""
    pm, pp = one_sided_slopes(u, grid)
    return np.where(q > 0, pm, pp)


def solve_hjb_linear(model: HamiltonianModel, q, rho, g, beta: float, R: float,
                     grid: SpatialGrid, tgrid: TimeGrid, summaries=None) -> SpaceTimeField:
    """Policy evaluation: ``-u_t + q u_x - L(x, -q, rho) = (beta^2/2) u_xx``, ``u(T) = g``.

    ``q`` is the policy in the sign convention of `mfgvv.coupling` (agents move with
    velocity ``-q``) and ``L(x, v, rho) = max_p (p v - H(x, p, rho))``.  For Hamiltonians
    even in ``p`` this is exactly the frozen-policy equation with ``L(x, q, rho)``.
    """
    g = _check_inputs(rho, g, grid, tgrid)
    qv = q.values if isinstance(q, SpaceTimeField) else np.asarray(q, dtype=float)
    if qv.shape != (tgrid.nt + 1, grid.n):
        raise StructuralError(f"policy shape {qv.shape} does not match grids")
    if np.any(np.abs(qv) > R * (1 + 1e-12)):
        raise ConfigurationError(f"policy exceeds bound R={R}")
    dt, dx, x = tgrid.dt, grid.dx, grid.x
    speed = float(np.abs(qv).max())
    if dt * speed / dx > CFL_MAX:
        raise ConfigurationError(
            f"CFL violated: dt={dt:.4g} > admissible {CFL_MAX * dx / speed:.4g}"
        )
    if summaries is None:
        summaries = _summaries(model, rho, grid)
    diffuse = ImplicitDiffusion(grid, 0.5 * beta**2 * dt, boundary="linear")
    u = np.empty((tgrid.nt + 1, grid.n))
    u[-1] = g
    for k in range(tgrid.nt - 1, -1, -1):
        qk = qv[k + 1]
        lag, _ = model.lagrangian_max(x, -qk, summaries[k + 1], R)
        du = upwind_derivative(u[k + 1], qk, grid)
        u[k] = diffuse(u[k + 1] - dt * (qk * du - lag))
        if not np.all(np.isfinite(u[k])):
            raise DivergenceError("non-finite value function", step=k)
    return SpaceTimeField(u, grid, tgrid, beta=beta)
