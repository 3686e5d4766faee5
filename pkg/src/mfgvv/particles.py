"""Monte Carlo companions of the PDE solvers: the N-player system and the FBSDE.

Both simulators read the feedback field ``-u_x`` from a grid solution by linear
interpolation in space and time.  Gaussian increments come from one Philox stream
per particle, keyed by ``(seed, particle index)`` through `numpy.random.SeedSequence`;
the ``k``-th draw of a stream drives step ``k``.  A particle's noise therefore
depends only on ``(seed, index, step)``, never on ``N``, on how particles are
batched, or on ``beta`` (common random numbers across a sweep).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, StructuralError
from .grid import SpatialGrid, gradient
from .hamiltonian import HamiltonianModel, MeasureSummary

log = logging.getLogger(__name__)

_NOISE_BLOCK = 256


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    step: int
    t: float
    seed: int
    beta: float

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise StructuralError("an ensemble needs a non-empty 1-D array of positions")
        if not np.all(np.isfinite(x)):
            raise StructuralError("non-finite particle positions")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    @property
    def N(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class FBSDEPath:
    """Forward state ``X``, adjoint ``Y`` and residuals, arrays of shape ``(steps + 1, paths)``.

    ``decoupling`` is ``|Y + grad u_ref(t, X)|``; ``adjoint`` is
    ``|Y(t) - Y(T) - int_t^T dH/dx ds|`` along the realised path.
    """

    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    decoupling: np.ndarray
    adjoint: np.ndarray

    @property
    def decoupling_sup(self) -> np.ndarray:
        """Per-path sup over time of the decoupling residual."""
        return self.decoupling.max(axis=0)

    @property
    def adjoint_sup(self) -> np.ndarray:
        return self.adjoint.max(axis=0)


class ParticleNoise:
    """Standard normal increments, one independent stream per particle.

    Streams are consumed in blocks; since a generator's output does not depend on how
    many values are requested per call, the draws are blocking-invariant.
    """

    def __init__(self, seed: int, N: int, first: int = 0):
        self.seed = int(seed)
        self._index = range(first, first + N)
        self._gens = [
            np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(i, 0))))
            for i in self._index
        ]
        self._buf = np.empty((0, N))
        self._next = 0

    def uniforms(self) -> np.ndarray:
        """One uniform per particle from a separate stream, used for initial sampling."""
        return np.array([
            np.random.Generator(
                np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(i, 1)))
            ).random()
            for i in self._index
        ])

    def step(self) -> np.ndarray:
        if self._next >= self._buf.shape[0]:
            self._buf = np.stack([g.standard_normal(_NOISE_BLOCK) for g in self._gens], axis=1)
            self._next = 0
        row = self._buf[self._next]
        self._next += 1
        return row


def _levels(solution):
    u = solution.u
    return u.grid, u.tgrid, gradient(u.values, u.grid)


def _at_time(levels: np.ndarray, tgrid, t: float, grid: SpatialGrid, x) -> np.ndarray:
    """Space-time linear interpolation of a stack of grid slices."""
    s = min(max(t / tgrid.dt, 0.0), float(tgrid.nt))
    k = min(int(np.floor(s)), tgrid.nt - 1)
    w = s - k
    a = grid.interpolate(levels[k], x)
    if w == 0.0:
        return a
    return (1.0 - w) * a + w * grid.interpolate(levels[k + 1], x)


def _steps(T: float, dt: float) -> int:
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ConfigurationError(f"dt={dt} does not divide the horizon T={T}")
    return n


def _confine(x, grid: SpatialGrid, warned: list) -> np.ndarray:
    if grid.periodic:
        return grid.wrap(x)
    out = np.clip(x, grid.x_min, grid.x_max)
    if not warned and np.any(out != x):
        log.warning("particles left [%g, %g] and were clamped to the domain", grid.x_min, grid.x_max)
        warned.append(True)
    return out


def smoothed_histogram(positions, grid: SpatialGrid) -> np.ndarray:
    """Cell histogram of the atoms with one ``(1/4, 1/2, 1/4)`` smoothing pass."""
    counts = np.bincount(grid.cell_index(positions), minlength=grid.n).astype(float)
    if grid.periodic:
        sm = 0.25 * np.roll(counts, 1) + 0.5 * counts + 0.25 * np.roll(counts, -1)
    else:
        padded = np.concatenate([counts[:1], counts, counts[-1:]])
        sm = 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]
    return sm / (sm.sum() * grid.dx)


def empirical_summary(model: HamiltonianModel, positions, grid: SpatialGrid) -> MeasureSummary:
    """Measure features of the empirical law: just the mean when that is all ``model`` needs."""
    if model.needs <= {"mean"}:
        return MeasureSummary.point(float(np.mean(positions)))
    return model.summarize(smoothed_histogram(positions, grid), grid)


def sample_initial(m0, grid: SpatialGrid, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of a cell density (exact for the piecewise-constant law)."""
    m0 = np.asarray(m0, dtype=float)
    cdf = np.concatenate([[0.0], np.cumsum(m0) * grid.dx])
    cdf /= cdf[-1]
    edges = grid.x_min + np.arange(grid.n + 1) * grid.dx
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(u, cdf[keep], edges[keep])


def simulate_nplayer(model: HamiltonianModel, solution, N: int, dt: float, seed: int,
                     x0=None, frozen: bool = False, m0=None) -> list[ParticleEnsemble]:
    """Euler-Maruyama for ``dX^i = dH/dp(X^i, -u_x(t, X^i), mu_t) dt + beta dB^i``.

    ``mu_t`` is the running empirical measure, or the solution's own density flow
    when ``frozen`` is set (decoupled McKean-Vlasov dynamics).  Initial positions are
    ``x0`` (scalar or length-``N`` array) or inverse-CDF samples of ``m0``, which
    defaults to the solution's first density slice.  Returns one ensemble per step,
    the initial one included.
    """
    if N < 1:
        raise ConfigurationError("N must be at least 1")
    grid, tgrid, du = _levels(solution)
    nsteps = _steps(tgrid.T, dt)
    beta = float(solution.beta)
    noise = ParticleNoise(seed, N)
    if x0 is None:
        base = solution.rho.values[0] if m0 is None else m0
        x = sample_initial(base, grid, noise.uniforms())
    else:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (N,)).copy()
    warned: list = []
    x = _confine(x, grid, warned)
    out = [ParticleEnsemble(x, 0, 0.0, seed, beta)]
    sq = np.sqrt(dt)
    for k in range(nsteps):
        t = k * dt
        p = -_at_time(du, tgrid, t, grid, x)
        if frozen:
            level = min(int(round(t / tgrid.dt)), tgrid.nt)
            mu = model.summarize(solution.rho.values[level], grid)
        else:
            mu = empirical_summary(model, x, grid)
        x = x + model.grad_p(x, p, mu) * dt + beta * sq * noise.step()
        x = _confine(x, grid, warned)
        out.append(ParticleEnsemble(x, k + 1, (k + 1) * dt, seed, beta))
    return out


def simulate_fbsde(model: HamiltonianModel, solution, x0, dt: float, seed: int,
                   n_paths: int = 1, grad_ref=None) -> FBSDEPath:
    """Forward paths of the FBSDE with ``Y = -u_x(t, X)`` read from the grid solution.

    ``X`` moves with drift ``dH/dp(X, Y, rho_t)``, ``rho_t`` being the solution's
    density at the nearest level.  ``grad_ref(t, x)`` is the gradient the decoupling
    residual is measured against; it defaults to the grid gradient itself.
    """
    grid, tgrid, du = _levels(solution)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,)).copy()
    if not np.all(grid.contains(x0)):
        raise ConfigurationError("x0 lies outside the domain")
    nsteps = _steps(tgrid.T, dt)
    beta = float(solution.beta)
    noise = ParticleNoise(seed, n_paths)
    summaries = {}

    def mu_at(t):
        level = min(int(round(t / tgrid.dt)), tgrid.nt)
        if level not in summaries:
            summaries[level] = model.summarize(solution.rho.values[level], grid)
        return summaries[level]

    times = np.arange(nsteps + 1) * dt
    X = np.empty((nsteps + 1, n_paths))
    Y = np.empty_like(X)
    hx = np.empty_like(X)
    ref = np.empty_like(X)
    warned: list = []
    x = x0
    for k in range(nsteps + 1):
        t = times[k]
        y = -_at_time(du, tgrid, t, grid, x)
        mu = mu_at(t)
        X[k], Y[k] = x, y
        hx[k] = model.grad_x(x, y, mu)
        ref[k] = y if grad_ref is None else -np.asarray(grad_ref(t, x), dtype=float)
        if k < nsteps:
            x = _confine(x + model.grad_p(x, y, mu) * dt + beta * np.sqrt(dt) * noise.step(), grid, warned)
    # int_t^T dH/dx ds by the trapezoid rule, accumulated backward from T
    seg = 0.5 * dt * (hx[1:] + hx[:-1])
    tail = np.zeros_like(X)
    tail[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    adjoint = np.abs(Y - Y[-1] - tail)
    return FBSDEPath(times, X, Y, np.abs(Y - ref), adjoint)


def _reference_quantiles(reference, levels: np.ndarray, grid: SpatialGrid | None) -> np.ndarray:
    if isinstance(reference, dict):
        return norm.ppf(levels, loc=reference["mean"], scale=np.sqrt(reference["variance"]))
    ref = np.asarray(reference, dtype=float)
    if grid is None:
        # another set of atoms: their own empirical quantile function
        srt = np.sort(ref.ravel())
        idx = np.minimum(np.floor(levels * srt.size).astype(int), srt.size - 1)
        return srt[idx]
    if ref.shape != (grid.n,):
        raise StructuralError(f"reference slice has shape {ref.shape}, expected {(grid.n,)}")
    return sample_initial(ref, grid, levels)


def empirical_w1(ensemble, reference, grid: SpatialGrid | None = None) -> float:
    """W1 between ``N`` equal-weight atoms and a reference law, by quantile matching.

    ``mean_i |X_(i) - F^{-1}((i - 1/2) / N)|``.  The reference is a Gaussian given as
    ``{"mean", "variance"}``, a cell density on ``grid``, or (without a grid) another
    array of atoms.  On a torus positions are taken in interval coordinates.
    """
    x = ensemble.positions if isinstance(ensemble, ParticleEnsemble) else np.asarray(ensemble, dtype=float)
    x = np.sort(np.ravel(x))
    if x.size == 0:
        raise ConfigurationError("empty ensemble")
    levels = (np.arange(x.size) + 0.5) / x.size
    return float(np.mean(np.abs(x - _reference_quantiles(reference, levels, grid))))


def sup_t_w1(ensembles, references, grid: SpatialGrid | None = None) -> float:
    """``max_t`` of `empirical_w1` over paired ensembles and reference slices."""
    return max(empirical_w1(e, r, grid) for e, r in zip(ensembles, references))
