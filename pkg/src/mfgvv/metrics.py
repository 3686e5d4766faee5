"""Wasserstein-1 distances, sup-norm differences and log-log rate fits."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, StructuralError
from .grid import SpaceTimeField, SpatialGrid

log = logging.getLogger(__name__)

RENORM_TOL = 1e-8


def _normalize(rho, grid: SpatialGrid) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    mass = rho.sum(axis=-1, keepdims=True) * grid.dx
    if np.any(np.abs(mass - 1.0) > RENORM_TOL):
        log.info("w1_grid: renormalising inputs with mass error %.3e", float(np.abs(mass - 1).max()))
    return rho / mass


def w1_grid(rho1, rho2, grid: SpatialGrid):
    """W1 between cell densities on the same grid.

    ``dx * sum_j |CDF1_j - CDF2_j|`` on an interval.  On a torus the CDF difference
    is shifted by the constant that minimises the L1 norm, which is the circular W1;
    the minimiser is a median of the difference values, so it is one of the ``n``
    cyclic offsets.  Leading axes are treated as a batch.
    """
    rho1 = np.asarray(rho1, dtype=float)
    rho2 = np.asarray(rho2, dtype=float)
    if rho1.shape != rho2.shape or rho1.shape[-1] != grid.n:
        raise StructuralError(f"w1_grid: shapes {rho1.shape} and {rho2.shape} do not match the grid")
    d = np.cumsum(_normalize(rho1, grid) - _normalize(rho2, grid), axis=-1) * grid.dx
    if grid.periodic:
        c = np.sort(d, axis=-1)[..., (grid.n - 1) // 2]
        d = d - c[..., None]
    return np.abs(d).sum(axis=-1) * grid.dx


def w1_sup_t(rho1, rho2, grid: SpatialGrid) -> float:
    """``max_n W1(rho1(t_n), rho2(t_n))`` for two trajectories."""
    a = rho1.values if isinstance(rho1, SpaceTimeField) else rho1
    b = rho2.values if isinstance(rho2, SpaceTimeField) else rho2
    return float(np.max(w1_grid(a, b, grid)))


def sup_diff(f1, f2, restriction=None, grid: SpatialGrid | None = None) -> float:
    """``max |f1 - f2|`` over all time levels and the cells whose centre lies in ``restriction``.

    ``restriction`` is an optional ``(x_lo, x_hi)`` pair; plain arrays need ``grid`` to
    honour it.
    """
    a = f1.values if isinstance(f1, SpaceTimeField) else np.asarray(f1, dtype=float)
    b = f2.values if isinstance(f2, SpaceTimeField) else np.asarray(f2, dtype=float)
    if a.shape != b.shape:
        raise StructuralError(f"sup_diff: shapes {a.shape} and {b.shape} differ")
    diff = np.abs(a - b)
    if restriction is not None:
        g = grid or getattr(f1, "grid", None)
        if g is None:
            raise ConfigurationError("sup_diff: a restriction needs the spatial grid")
        lo, hi = restriction
        mask = (g.x >= lo) & (g.x <= hi)
        if not mask.any():
            raise ConfigurationError(f"restriction {restriction} contains no cell centre")
        diff = diff[..., mask]
    return float(diff.max())


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple

    @property
    def n_points(self) -> int:
        return len(self.points)


def loglog_slope(pairs) -> RateFit:
    """Least-squares fit of ``log error = slope * log beta + intercept``."""
    pairs = [(float(b), float(e)) for b, e in pairs]
    if len(pairs) < 2:
        raise ConfigurationError("loglog_slope needs at least two points")
    if any(b <= 0 or e <= 0 for b, e in pairs):
        raise ConfigurationError("loglog_slope needs positive beta and error values")
    lx = np.log([b for b, _ in pairs])
    ly = np.log([e for _, e in pairs])
    xm, ym = lx.mean(), ly.mean()
    sxx = np.sum((lx - xm) ** 2)
    if sxx == 0:
        raise ConfigurationError("loglog_slope needs at least two distinct beta values")
    slope = np.sum((lx - xm) * (ly - ym)) / sxx
    intercept = ym - slope * xm
    ss_tot = np.sum((ly - ym) ** 2)
    ss_res = np.sum((ly - slope * lx - intercept) ** 2)
    r2 = 1.0 if ss_tot == 0 else float(np.clip(1.0 - ss_res / ss_tot, 0.0, 1.0))
    return RateFit(float(slope), float(intercept), r2, tuple(zip(lx.tolist(), ly.tolist())))


def moments(rho, grid: SpatialGrid) -> tuple[float, float]:
    """Mean and variance of a cell density (interval coordinates)."""
    rho = np.asarray(rho, dtype=float)
    w = rho * grid.dx
    mass = w.sum()
    mean = float(np.sum(grid.x * w) / mass)
    var = float(np.sum((grid.x - mean) ** 2 * w) / mass)
    return mean, var
