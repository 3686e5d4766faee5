"""Forward conservative solver for ``rho_t + (rho b)_x = (beta^2/2) rho_xx``.

Finite-volume upwind fluxes on cell faces followed by a backward-Euler
diffusion step.  Truncated domains have zero-flux end faces, so discrete mass
is conserved up to rounding on both grid kinds.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, DivergenceError, StructuralError
from .grid import DensityTrajectory, ImplicitDiffusion, SpaceTimeField, SpatialGrid, TimeGrid
from .hamiltonian import HamiltonianModel

CFL_MAX = 0.9
NEG_TOL = 1e-12

# Policy sign: agents following policy q move with velocity POLICY_SIGN * q, so that
# d/dt rho - div(rho q) = ... coincides with the MFG equation at q = -dH/dp(x, -u_x).
POLICY_SIGN = -1.0


def make_initial_density(params, grid: SpatialGrid) -> np.ndarray:
    """Build a unit-mass initial slice.

    ``params`` is a dict with ``kind`` in ``{"gaussian", "point", "custom"}``:

    * gaussian: ``mean``, ``variance``.  Density evaluated at cell centres, both end
      cells set to zero, then renormalised.
    * point: ``at``; all mass in the cell containing ``at``.
    * custom: ``values``, a nonnegative slice renormalised to unit mass.
    """
    kind = params.get("kind", "gaussian")
    dx = grid.dx
    if kind == "gaussian":
        m = float(params["mean"])
        s2 = float(params["variance"])
        if not s2 > 0:
            raise ConfigurationError(f"variance must be positive, got {s2}")
        if not grid.contains(m):
            raise ConfigurationError(f"mean {m} outside the domain")
        rho = norm.pdf(grid.x, loc=m, scale=np.sqrt(s2))
        rho[0] = rho[-1] = 0.0
    elif kind == "point":
        a = float(params["at"])
        if not grid.contains(a):
            raise ConfigurationError(f"point mass at {a} outside the domain")
        rho = np.zeros(grid.n)
        rho[grid.cell_index(a)] = 1.0 / dx
        return rho
    elif kind == "custom":
        rho = np.array(params["values"], dtype=float)
        if rho.shape != (grid.n,):
            raise StructuralError(f"custom density has shape {rho.shape}")
        if np.any(rho < 0):
            raise ConfigurationError("custom density has negative entries")
    else:
        raise ConfigurationError(f"unknown initial density kind {kind!r}")
    mass = rho.sum() * dx
    if not mass > 0:
        raise ConfigurationError("initial density has zero mass")
    return rho / mass


def face_slopes(u, grid: SpatialGrid) -> np.ndarray:
    """``(u_{j+1} - u_j) / dx`` on each face (the common one-sided slope of both neighbours)."""
    u = np.asarray(u, dtype=float)
    if grid.periodic:
        return (np.roll(u, -1, axis=-1) - u) / grid.dx
    return np.diff(u, axis=-1) / grid.dx


def face_velocities(model: HamiltonianModel, u, mu, grid: SpatialGrid) -> np.ndarray:
    """``dH/dp(x_{j+1/2}, -u_x, mu)`` at every face for one time level."""
    return np.asarray(model.grad_p(grid.faces, -face_slopes(u, grid), mu), dtype=float)


def policy_face_velocities(q, grid: SpatialGrid) -> np.ndarray:
    """Face velocities from a cell-centred policy slice (average of the two neighbours)."""
    q = np.asarray(q, dtype=float)
    if grid.periodic:
        qf = 0.5 * (q + np.roll(q, -1, axis=-1))
    else:
        qf = 0.5 * (q[..., :-1] + q[..., 1:])
    return POLICY_SIGN * qf


def upwind_flux_divergence(rho, b, grid: SpatialGrid) -> np.ndarray:
    """``(F_{j+1/2} - F_{j-1/2}) / dx`` with ``F = b+ rho_left + b- rho_right``."""
    bp = np.maximum(b, 0.0)
    bm = np.minimum(b, 0.0)
    if grid.periodic:
        flux = bp * rho + bm * np.roll(rho, -1)
        return (flux - np.roll(flux, 1)) / grid.dx
    flux = np.zeros(grid.n + 1)
    flux[1:-1] = bp * rho[:-1] + bm * rho[1:]
    return np.diff(flux) / grid.dx


def lax_friedrichs_flux_divergence(rho, b, grid: SpatialGrid, dt: float) -> np.ndarray:
    """Classic Lax-Friedrichs flux ``b (rho_L + rho_R)/2 - dx/(2 dt) (rho_R - rho_L)``."""
    c = 0.5 * grid.dx / dt
    if grid.periodic:
        right = np.roll(rho, -1)
        flux = 0.5 * b * (rho + right) - c * (right - rho)
        return (flux - np.roll(flux, 1)) / grid.dx
    flux = np.zeros(grid.n + 1)
    flux[1:-1] = 0.5 * b * (rho[:-1] + rho[1:]) - c * (rho[1:] - rho[:-1])
    return np.diff(flux) / grid.dx


def _outflow_rate(b, grid: SpatialGrid) -> np.ndarray:
    """Per-cell outgoing face speed; positivity needs ``dt * rate / dx <= 1``."""
    bp = np.maximum(b, 0.0)
    bm = np.minimum(b, 0.0)
    if grid.periodic:
        return bp - np.roll(bm, 1)
    out = np.zeros(grid.n)
    out[:-1] += bp
    out[1:] -= bm
    return out


def _march(velocity_at, m0, beta, grid: SpatialGrid, tgrid: TimeGrid,
           scheme: str = "local") -> DensityTrajectory:
    m0 = np.asarray(m0, dtype=float)
    if m0.shape != (grid.n,):
        raise StructuralError(f"initial slice has shape {m0.shape}, expected {(grid.n,)}")
    if beta < 0:
        raise ConfigurationError("beta must be nonnegative")
    if scheme not in ("local", "classic"):
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    dt, dx = tgrid.dt, grid.dx
    diffuse = ImplicitDiffusion(grid, 0.5 * beta**2 * dt)
    rho = np.empty((tgrid.nt + 1, grid.n))
    rho[0] = m0
    for k in range(tgrid.nt):
        b = velocity_at(k, rho[k])
        bmax = float(np.abs(b).max()) if b.size else 0.0
        if dt * bmax / dx > CFL_MAX or dt * _outflow_rate(b, grid).max() / dx > 1.0:
            raise ConfigurationError(
                f"CFL violated at level {k}: dt={dt:.4g} > admissible {CFL_MAX * dx / bmax:.4g}"
            )
        if scheme == "local":
            div = upwind_flux_divergence(rho[k], b, grid)
        else:
            div = lax_friedrichs_flux_divergence(rho[k], b, grid, dt)
        rho[k + 1] = diffuse(rho[k] - dt * div)
        low = rho[k + 1].min()
        if not np.all(np.isfinite(rho[k + 1])) or low < -NEG_TOL:
            raise DivergenceError(f"density became invalid (min {low:.3e})", step=k + 1)
    return DensityTrajectory(rho, grid, tgrid, beta=beta)


def solve_fp(model: HamiltonianModel, u, m0, beta: float, grid: SpatialGrid,
             tgrid: TimeGrid, scheme: str = "local") -> DensityTrajectory:
    """Evolve ``m0`` under the optimal drift ``dH/dp(x, -u_x, rho_t)``.

    The measure argument of the drift is the density at the current level.
    ``scheme="classic"`` swaps the upwind flux for the Lax-Friedrichs one, matching
    the classic option of `mfgvv.hjb.solve_hjb`.
    """
    uv = u.values if isinstance(u, SpaceTimeField) else np.asarray(u, dtype=float)
    if uv.shape != (tgrid.nt + 1, grid.n):
        raise StructuralError(f"value field shape {uv.shape} does not match grids")

    def velocity_at(k, rho_k):
        return face_velocities(model, uv[k], model.summarize(rho_k, grid), grid)

    return _march(velocity_at, m0, beta, grid, tgrid, scheme)


def solve_fp_face_velocity(b, m0, beta: float, grid: SpatialGrid, tgrid: TimeGrid):
    """Evolve ``m0`` under a prescribed face-velocity field of shape ``(nt + 1, n_faces)``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (tgrid.nt + 1, len(grid.faces)):
        raise StructuralError(f"face velocity shape {b.shape} does not match grids")
    return _march(lambda k, _: b[k], m0, beta, grid, tgrid)


def solve_fp_policy(q, m0, beta: float, grid: SpatialGrid, tgrid: TimeGrid) -> DensityTrajectory:
    """Solve ``rho_t - (rho q)_x = (beta^2/2) rho_xx`` for a cell-centred policy ``q``."""
    qv = q.values if isinstance(q, SpaceTimeField) else np.asarray(q, dtype=float)
    if qv.shape != (tgrid.nt + 1, grid.n):
        raise StructuralError(f"policy shape {qv.shape} does not match grids")
    return solve_fp_face_velocity(policy_face_velocities(qv, grid), m0, beta, grid, tgrid)
