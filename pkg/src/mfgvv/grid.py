"""Uniform 1-D space/time grids and the discrete calculus shared by all solvers.

Fields are cell-centred: cell ``j`` has centre ``x_min + (j + 1/2) dx``.  On a torus
index arithmetic wraps modulo ``n``; on a truncated interval the gradient uses
one-sided differences at the two end cells and the Laplacian uses a homogeneous
Neumann ghost cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigurationError, DivergenceError, StructuralError

GridKind = Literal["torus", "truncated"]

MASS_TOL = 1e-10


@dataclass(frozen=True)
class SpatialGrid:
    kind: GridKind
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.kind not in ("torus", "truncated"):
            raise ConfigurationError(f"unknown grid kind {self.kind!r}")
        if self.n < 4:
            raise ConfigurationError(f"need at least 4 cells, got {self.n}")
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def x(self) -> np.ndarray:
        """Cell centres."""
        return self.x_min + (np.arange(self.n) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        """Interior faces ``x_{j+1/2}`` for j = 0..n-2, plus the wrap face on a torus."""
        nf = self.n if self.periodic else self.n - 1
        return self.x_min + (np.arange(nf) + 1.0) * self.dx

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.x_min) & (x <= self.x_max)

    def wrap(self, x):
        """Map positions into ``[x_min, x_max)`` on a torus; identity otherwise."""
        if not self.periodic:
            return x
        return self.x_min + np.mod(np.asarray(x, dtype=float) - self.x_min, self.length)

    def cell_index(self, x) -> np.ndarray:
        j = np.floor((np.asarray(self.wrap(x), dtype=float) - self.x_min) / self.dx).astype(int)
        return np.clip(j, 0, self.n - 1)

    def interpolate(self, f: np.ndarray, x) -> np.ndarray:
        """Piecewise-linear interpolation of a cell-centred slice at points ``x``.

        Truncated grids hold the end-cell value constant outside the outermost centres.
        """
        f = _check_slice(f, self)
        x = np.asarray(self.wrap(x), dtype=float)
        s = (x - self.x_min) / self.dx - 0.5
        if self.periodic:
            j0 = np.floor(s).astype(int)
            w = s - j0
            return (1.0 - w) * f[j0 % self.n] + w * f[(j0 + 1) % self.n]
        s = np.clip(s, 0.0, self.n - 1.0)
        j0 = np.minimum(np.floor(s).astype(int), self.n - 2)
        w = s - j0
        return (1.0 - w) * f[j0] + w * f[j0 + 1]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    nt: int

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.T}")
        if self.nt < 1:
            raise ConfigurationError(f"need at least one time step, got {self.nt}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


@dataclass(frozen=True)
class SpaceTimeField:
    """Values ``u(t_n, x_j)`` stored as an ``(nt + 1, n)`` array."""

    values: np.ndarray
    grid: SpatialGrid
    tgrid: TimeGrid
    beta: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.tgrid.nt + 1, self.grid.n):
            raise StructuralError(
                f"field shape {v.shape} does not match grids {(self.tgrid.nt + 1, self.grid.n)}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, k) -> np.ndarray:
        return self.values[k]

    @property
    def shape(self):
        return self.values.shape

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def gradient(self) -> np.ndarray:
        """Central-difference spatial gradient at every time level."""
        return gradient(self.values, self.grid)


class DensityTrajectory(SpaceTimeField):
    """Nonnegative, unit-mass densities ``rho(t_n, .)``."""

    def masses(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.dx

    def check(self, mass_tol: float = MASS_TOL, neg_tol: float = 1e-12) -> None:
        """Raise `DivergenceError` if positivity or unit mass is violated."""
        low = float(self.values.min())
        if low < -neg_tol:
            k = int(np.argmin(self.values.min(axis=1)))
            raise DivergenceError(f"negative density {low:.3e}", step=k)
        err = np.abs(self.masses() - 1.0)
        if err.max() > mass_tol:
            raise DivergenceError(f"mass drift {err.max():.3e}", step=int(err.argmax()))


def _check_slice(f, grid: SpatialGrid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.n:
        raise StructuralError(f"slice length {f.shape[-1]} does not match grid size {grid.n}")
    return f


def gradient(f, grid: SpatialGrid) -> np.ndarray:
    """Central differences, periodic or one-sided at truncated ends.

    Works on a single slice or on a stack of slices along the last axis.
    """
    f = _check_slice(f, grid)
    dx = grid.dx
    if grid.periodic:
        return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2.0 * dx)
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * dx)
    out[..., 0] = (f[..., 1] - f[..., 0]) / dx
    out[..., -1] = (f[..., -1] - f[..., -2]) / dx
    return out


def one_sided_slopes(f, grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward differences ``(p_minus, p_plus)``.

    At truncated ends the missing slope is replaced by the adjacent interior one.
    """
    f = _check_slice(f, grid)
    dx = grid.dx
    if grid.periodic:
        d = (np.roll(f, -1, axis=-1) - f) / dx
        return np.roll(d, 1, axis=-1), d
    d = np.diff(f, axis=-1) / dx
    pm = np.concatenate([d[..., :1], d], axis=-1)
    pp = np.concatenate([d, d[..., -1:]], axis=-1)
    return pm, pp


def laplacian(f, grid: SpatialGrid) -> np.ndarray:
    f = _check_slice(f, grid)
    dx2 = grid.dx**2
    if grid.periodic:
        return (np.roll(f, -1, axis=-1) - 2.0 * f + np.roll(f, 1, axis=-1)) / dx2
    fp = np.concatenate([f[..., :1], f, f[..., -1:]], axis=-1)
    return (fp[..., 2:] - 2.0 * fp[..., 1:-1] + fp[..., :-2]) / dx2


def integrate(f, grid: SpatialGrid):
    """Midpoint rule ``sum_j f_j dx`` (along the last axis)."""
    f = _check_slice(f, grid)
    return f.sum(axis=-1) * grid.dx


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def solve_cyclic_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a periodic tridiagonal system by Sherman-Morrison.

    Row ``j`` reads ``lower[j] x[j-1] + diag[j] x[j] + upper[j] x[j+1] = rhs[j]``
    with indices taken modulo ``n``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    diag = np.asarray(diag, dtype=float)
    n = len(diag)
    alpha = upper[-1]  # A[n-1, 0]
    beta = lower[0]  # A[0, n-1]
    gamma = -diag[0]
    bb = diag.copy()
    bb[0] -= gamma
    bb[-1] -= alpha * beta / gamma
    x = solve_tridiagonal(lower, bb, upper, rhs)
    uvec = np.zeros(n)
    uvec[0] = gamma
    uvec[-1] = alpha
    z = solve_tridiagonal(lower, bb, upper, uvec)
    fact = (x[0] + beta * x[-1] / gamma) / (1.0 + z[0] + beta * z[-1] / gamma)
    return x - fact * z


class ImplicitDiffusion:
    """Backward-Euler diffusion step: solve ``(I - c * Lap_h) v = f``.

    ``c`` is the product ``(beta^2 / 2) * dt``.  Periodic grids use the cyclic solver.
    On truncated grids ``boundary="neumann"`` uses the Neumann-ghost matrix, whose
    column sums are one so discrete mass is preserved (densities);
    ``boundary="linear"`` uses a linearly extrapolated ghost, i.e. zero curvature in
    the end cells, which leaves growing value functions undistorted.
    """

    def __init__(self, grid: SpatialGrid, coef: float, boundary: str = "neumann"):
        if coef < 0:
            raise ConfigurationError("diffusion coefficient must be nonnegative")
        if boundary not in ("neumann", "linear"):
            raise ConfigurationError(f"unknown boundary treatment {boundary!r}")
        self.grid = grid
        self.coef = float(coef)
        self.boundary = boundary
        n = grid.n
        r = self.coef / grid.dx**2
        self.lower = np.full(n, -r)
        self.upper = np.full(n, -r)
        self.diag = np.full(n, 1.0 + 2.0 * r)
        if not grid.periodic:
            self.lower[0] = 0.0
            self.upper[-1] = 0.0
            if boundary == "neumann":
                self.diag[0] = self.diag[-1] = 1.0 + r
            else:
                self.diag[0] = self.diag[-1] = 1.0
                self.upper[0] = self.lower[-1] = 0.0

    def __call__(self, f: np.ndarray) -> np.ndarray:
        if self.coef == 0.0:
            return np.array(f, dtype=float)
        if self.grid.periodic:
            return solve_cyclic_tridiagonal(self.lower, self.diag, self.upper, f)
        return solve_tridiagonal(self.lower, self.diag, self.upper, f)

    def matrix(self) -> np.ndarray:
        """Dense operator, for tests."""
        n = self.grid.n
        a = np.diag(self.diag)
        for j in range(n):
            if j > 0 or self.grid.periodic:
                a[j, (j - 1) % n] += self.lower[j]
            if j < n - 1 or self.grid.periodic:
                a[j, (j + 1) % n] += self.upper[j]
        return a
