"""Hamiltonians ``H(x, p, mu)`` and the derived quantities the solvers need.

All evaluation methods are vectorised over ``x`` and ``p`` and take a
`MeasureSummary` describing the population at the current time level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, UnsupportedModelError
from .grid import SpatialGrid


def triangular_kernel(half_width: float) -> Callable[[np.ndarray], np.ndarray]:
    """Unit-mass hat function supported on ``[-half_width, half_width]``."""

    def phi(z):
        return np.maximum(0.0, 1.0 - np.abs(z) / half_width) / half_width

    return phi


@dataclass(frozen=True)
class MeasureSummary:
    """The features of ``rho_t`` a Hamiltonian may depend on.

    ``local_density`` and ``convolved`` are cell-centred slices on ``grid`` and are
    evaluated off-grid by linear interpolation.
    """

    mean: float | None = None
    local_density: np.ndarray | None = None
    convolved: np.ndarray | None = None
    grid: SpatialGrid | None = None

    @classmethod
    def from_density(cls, rho, grid: SpatialGrid, kernel=None) -> MeasureSummary:
        rho = np.asarray(rho, dtype=float)
        mean = float(np.sum(grid.x * rho) * grid.dx)
        conv = None
        if kernel is not None:
            conv = convolve(rho, grid, kernel)
        return cls(mean=mean, local_density=rho, convolved=conv, grid=grid)

    @classmethod
    def point(cls, mean: float) -> MeasureSummary:
        return cls(mean=float(mean))

    def _interp(self, name: str, x):
        f = getattr(self, name)
        if f is None or self.grid is None:
            raise ConfigurationError(f"measure summary lacks {name!r}")
        return self.grid.interpolate(f, x)

    def _interp_slope(self, name: str, x):
        """Derivative of the piecewise-linear interpolant (one-sided at the nodes)."""
        f = getattr(self, name)
        if f is None or self.grid is None:
            raise ConfigurationError(f"measure summary lacks {name!r}")
        g = self.grid
        if g.periodic:
            d = (np.roll(f, -1) - f) / g.dx
            s = (np.asarray(g.wrap(x), dtype=float) - g.x_min) / g.dx - 0.5
            return d[np.floor(s).astype(int) % g.n]
        d = np.diff(f) / g.dx
        s = (np.asarray(x, dtype=float) - g.x_min) / g.dx - 0.5
        inside = (s >= 0) & (s <= g.n - 1)
        j = np.clip(np.floor(s).astype(int), 0, g.n - 2)
        return np.where(inside, d[j], 0.0)

    def density_at(self, x):
        return self._interp("local_density", x)

    def density_slope_at(self, x):
        return self._interp_slope("local_density", x)

    def convolved_at(self, x):
        return self._interp("convolved", x)

    def convolved_slope_at(self, x):
        return self._interp_slope("convolved", x)


def convolve(rho, grid: SpatialGrid, kernel) -> np.ndarray:
    """``(phi * rho)(x_j) = sum_k phi(x_j - x_k) rho_k dx`` (periodic distance on a torus)."""
    x = grid.x
    z = x[:, None] - x[None, :]
    if grid.periodic:
        z = z - grid.length * np.round(z / grid.length)
    return kernel(z) @ np.asarray(rho, dtype=float) * grid.dx


class HamiltonianModel:
    """Base class.  Subclasses implement `H`, `grad_p`, `grad_x` and `grad_pp`.

    Attributes
    ----------
    name : str
    needs : frozenset of measure features used (``"mean"``, ``"local_density"``,
        ``"convolved"``).
    convexity : lower bound ``c0`` on ``d^2 H / dp^2``; nonpositive means the model
        is not strictly convex and `lagrangian_max` is unavailable.
    quadratic_coef : ``Gamma`` when ``H = Gamma p^2 + (terms free of p)``, else None.
    """

    name = "abstract"
    needs: frozenset = frozenset()
    convexity = 0.0
    quadratic_coef: float | None = None
    kernel = None

    def summarize(self, rho, grid: SpatialGrid) -> MeasureSummary:
        return MeasureSummary.from_density(rho, grid, kernel=self.kernel)

    def _check(self, mu: MeasureSummary):
        for feat in self.needs:
            if getattr(mu, feat) is None:
                raise ConfigurationError(f"model {self.name!r} needs measure feature {feat!r}")

    def H(self, x, p, mu: MeasureSummary):
        raise NotImplementedError

    def grad_p(self, x, p, mu: MeasureSummary):
        raise NotImplementedError

    def grad_x(self, x, p, mu: MeasureSummary):
        raise NotImplementedError

    def grad_pp(self, x, p, mu: MeasureSummary):
        raise NotImplementedError

    def lagrangian_max(self, x, q, mu: MeasureSummary, R: float = np.inf):
        """Return ``(L, p_star)`` with ``L = max_p (p q - H(x, p, mu))``.

        Quadratic-in-p models use ``p_star = q / (2 Gamma)``; others run a vectorised
        Newton iteration on ``q - dH/dp = 0``, which converges since ``H`` is strictly
        convex in ``p``.
        """
        if not self.convexity > 0:
            raise UnsupportedModelError(f"model {self.name!r} is not strictly convex in p")
        q = np.asarray(q, dtype=float)
        if np.any(np.abs(q) > R * (1 + 1e-12)):
            raise ConfigurationError(f"|q| exceeds the policy bound R={R}")
        self._check(mu)
        x = np.broadcast_to(np.asarray(x, dtype=float), np.broadcast(x, q).shape)
        if self.quadratic_coef is not None:
            p = q / (2.0 * self.quadratic_coef)
        else:
            p = q / (2.0 * self.convexity)
            for _ in range(100):
                step = (self.grad_p(x, p, mu) - q) / self.grad_pp(x, p, mu)
                p = p - step
                if np.all(np.abs(step) <= 1e-14 * (1.0 + np.abs(p))):
                    break
        return p * q - self.H(x, p, mu), p


class QuadraticMeanField(HamiltonianModel):
    """``H = |p|^2 / 2 - (x - mean(mu))^2 / 2``: nonlocal, separable, closed-form solvable."""

    name = "quadratic_mean_field"
    needs = frozenset({"mean"})
    convexity = 1.0
    quadratic_coef = 0.5

    def H(self, x, p, mu):
        self._check(mu)
        return 0.5 * np.square(p) - 0.5 * np.square(np.asarray(x) - mu.mean)

    def grad_p(self, x, p, mu):
        return np.asarray(p, dtype=float) + 0.0 * np.asarray(x, dtype=float)

    def grad_x(self, x, p, mu):
        self._check(mu)
        return -(np.asarray(x, dtype=float) - mu.mean) + 0.0 * np.asarray(p, dtype=float)

    def grad_pp(self, x, p, mu):
        return np.ones(np.broadcast(x, p).shape)


class LocalSeparable(HamiltonianModel):
    """Local coupling on the torus::

        H = s * (p^2 - mu(x)^2 - cos(4 pi x) - 0.1 cos(2 pi x) - 0.1 sin(2 pi (x - pi/8)^2))

    with ``s = 0.01``.
    """

    name = "local_separable_62"
    needs = frozenset({"local_density"})

    def __init__(self, scale: float = 0.01):
        self.scale = float(scale)
        self.convexity = 2.0 * self.scale
        self.quadratic_coef = self.scale

    @staticmethod
    def potential(x):
        x = np.asarray(x, dtype=float)
        return (
            -np.cos(4 * np.pi * x)
            - 0.1 * np.cos(2 * np.pi * x)
            - 0.1 * np.sin(2 * np.pi * (x - np.pi / 8) ** 2)
        )

    @staticmethod
    def potential_slope(x):
        x = np.asarray(x, dtype=float)
        y = x - np.pi / 8
        return (
            4 * np.pi * np.sin(4 * np.pi * x)
            + 0.2 * np.pi * np.sin(2 * np.pi * x)
            - 0.4 * np.pi * y * np.cos(2 * np.pi * y**2)
        )

    def H(self, x, p, mu):
        self._check(mu)
        m = mu.density_at(x)
        return self.scale * (np.square(p) - np.square(m) + self.potential(x))

    def grad_p(self, x, p, mu):
        return 2.0 * self.scale * np.asarray(p, dtype=float) + 0.0 * np.asarray(x, dtype=float)

    def grad_x(self, x, p, mu):
        self._check(mu)
        m = mu.density_at(x)
        dm = mu.density_slope_at(x)
        return self.scale * (-2.0 * m * dm + self.potential_slope(x)) + 0.0 * np.asarray(p)

    def grad_pp(self, x, p, mu):
        return np.full(np.broadcast(x, p).shape, 2.0 * self.scale)


class Congestion(HamiltonianModel):
    """Nonlocal congestion: ``Gamma p^2 + gamma(p) / |eta + F((phi * mu)(x))| + G(x)``.

    ``gamma(p) = 1 / (1 + p^2)``, ``F(r) = |r|``, ``G(x) = cos(2 pi x)`` and ``phi`` a
    triangular bump.  Strict convexity needs ``2 Gamma > 2 / eta`` since
    ``min gamma'' = -2``; the constructor rejects parameters that violate it.
    """

    name = "congestion"
    needs = frozenset({"convolved"})

    def __init__(self, Gamma: float = 1.0, eta: float = 2.0, half_width: float = 0.1):
        self.Gamma = float(Gamma)
        self.eta = float(eta)
        self.half_width = float(half_width)
        self.kernel = triangular_kernel(half_width)
        self.convexity = 2.0 * self.Gamma - 2.0 / self.eta
        if not self.convexity > 0:
            raise UnsupportedModelError(
                f"congestion model not convex in p: 2*Gamma - 2/eta = {self.convexity}"
            )

    @staticmethod
    def gamma(p):
        return 1.0 / (1.0 + np.square(p))

    @staticmethod
    def dgamma(p):
        return -2.0 * p / (1.0 + np.square(p)) ** 2

    @staticmethod
    def d2gamma(p):
        p2 = np.square(p)
        return (6.0 * p2 - 2.0) / (1.0 + p2) ** 3

    def _denom(self, x, mu):
        c = mu.convolved_at(x)
        return c, self.eta + np.abs(c)

    def H(self, x, p, mu):
        self._check(mu)
        _, den = self._denom(x, mu)
        return self.Gamma * np.square(p) + self.gamma(p) / den + np.cos(2 * np.pi * np.asarray(x))

    def grad_p(self, x, p, mu):
        self._check(mu)
        _, den = self._denom(x, mu)
        return 2.0 * self.Gamma * np.asarray(p) + self.dgamma(p) / den

    def grad_x(self, x, p, mu):
        self._check(mu)
        c, den = self._denom(x, mu)
        dc = mu.convolved_slope_at(x)
        return -self.gamma(p) * np.sign(c) * dc / den**2 - 2 * np.pi * np.sin(2 * np.pi * np.asarray(x))

    def grad_pp(self, x, p, mu):
        self._check(mu)
        _, den = self._denom(x, mu)
        return 2.0 * self.Gamma + self.d2gamma(p) / den


class CustomHamiltonian(HamiltonianModel):
    """Model assembled from callables ``f(x, p, mu)``; used for synthetic test cases."""

    def __init__(self, H, grad_p, grad_x=None, grad_pp=None, convexity=0.0, name="custom",
                 needs=frozenset(), quadratic_coef=None):
        self.name = name
        self._H, self._gp, self._gx, self._gpp = H, grad_p, grad_x, grad_pp
        self.convexity = convexity
        self.needs = frozenset(needs)
        self.quadratic_coef = quadratic_coef

    def _full(self, f, x, p, mu):
        return np.broadcast_to(np.asarray(f(x, p, mu), dtype=float), np.broadcast(x, p).shape)

    def H(self, x, p, mu):
        return self._full(self._H, x, p, mu)

    def grad_p(self, x, p, mu):
        return self._full(self._gp, x, p, mu)

    def grad_x(self, x, p, mu):
        if self._gx is None:
            return np.zeros(np.broadcast(x, p).shape)
        return self._full(self._gx, x, p, mu)

    def grad_pp(self, x, p, mu):
        if self._gpp is None:
            raise UnsupportedModelError("grad_pp not provided")
        return self._full(self._gpp, x, p, mu)


def zero_hamiltonian() -> CustomHamiltonian:
    return CustomHamiltonian(lambda x, p, mu: 0.0, lambda x, p, mu: 0.0, name="zero")


def constant_drift(c: float) -> CustomHamiltonian:
    """``H = c p``: every agent drifts at velocity ``c`` regardless of ``u``."""
    return CustomHamiltonian(lambda x, p, mu: c * np.asarray(p), lambda x, p, mu: c,
                             name=f"drift({c})")


def eval_H(model: HamiltonianModel, x, p, mu):
    return model.H(x, p, mu)


def grad_p(model: HamiltonianModel, x, p, mu):
    return model.grad_p(x, p, mu)


def grad_x(model: HamiltonianModel, x, p, mu):
    return model.grad_x(x, p, mu)


def lagrangian_max(model: HamiltonianModel, x, q, mu, R: float = np.inf):
    return model.lagrangian_max(x, q, mu, R)


MODELS = {
    "quadratic_mean_field": QuadraticMeanField,
    "local_separable_62": LocalSeparable,
    "congestion": Congestion,
}


def make_model(name: str, **params) -> HamiltonianModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**params)
