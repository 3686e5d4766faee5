import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfgvv import closed_form as cf
from mfgvv.errors import ConfigurationError, StructuralError
from mfgvv.grid import SpatialGrid, TimeGrid
from mfgvv.hamiltonian import HamiltonianModel, LocalSeparable, QuadraticMeanField, constant_drift, zero_hamiltonian
from mfgvv.hjb import lax_friedrichs_hamiltonian, numerical_viscosity, solve_hjb, solve_hjb_linear
from mfgvv.metrics import sup_diff

TORUS = SpatialGrid("torus", 0.0, 1.0, 100)


def flat_density(grid, tgrid):
    return np.ones((tgrid.nt + 1, grid.n)) / grid.length


def exact_density(grid, tgrid, beta, sigma2=0.04):
    tt, xx = np.meshgrid(tgrid.t, grid.x, indexing="ij")
    rho = cf.rho_exact(tt, xx, beta, 0.0, sigma2)
    return rho / (rho.sum(axis=1, keepdims=True) * grid.dx)


@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_zero_hamiltonian_zero_data(beta):
    tg = TimeGrid(1.0, 20)
    u = solve_hjb(zero_hamiltonian(), flat_density(TORUS, tg), np.zeros(TORUS.n), beta, TORUS, tg)
    assert np.all(u.values == 0.0)


def test_terminal_slice_is_exact():
    tg = TimeGrid(0.5, 50)
    g = np.sin(2 * np.pi * TORUS.x)
    u = solve_hjb(LocalSeparable(), flat_density(TORUS, tg), g, 0.2, TORUS, tg)
    np.testing.assert_array_equal(u.values[-1], g)


def test_constant_drift_transports_terminal_data():
    # H = c p at p = -u_x gives -u_t - c u_x = 0, so u(t, x) = g(x + c (T - t))
    c, T = 0.5, 0.4
    errs = []
    for n in (100, 200):
        grid, tg = SpatialGrid("torus", 0, 1, n), TimeGrid(T, n)
        g = np.sin(2 * np.pi * grid.x)
        u = solve_hjb(constant_drift(c), flat_density(grid, tg), g, 0.0, grid, tg)
        errs.append(np.max(np.abs(u.values[0] - np.sin(2 * np.pi * (grid.x + c * T)))))
    assert errs[0] < 0.2
    assert 1.6 <= errs[0] / errs[1] <= 2.4


def test_heat_step_on_quadratic_matches_dense_solve():
    grid, tg = SpatialGrid("truncated", -2, 2, 20), TimeGrid(0.1, 1)
    beta = 0.8
    g = 0.5 * grid.x**2
    u = solve_hjb(zero_hamiltonian(), flat_density(grid, tg), g, beta, grid, tg)
    r = 0.5 * beta**2 * tg.dt / grid.dx**2
    a = np.eye(grid.n) * (1 + 2 * r) - r * (np.eye(grid.n, k=1) + np.eye(grid.n, k=-1))
    a[0] = 0
    a[-1] = 0
    a[0, 0] = a[-1, -1] = 1.0  # zero-curvature ends
    np.testing.assert_allclose(u.values[0], np.linalg.solve(a, g), atol=1e-13)


def test_decoupled_closed_form_solve_converges_first_order():
    errs = []
    for n, nt in [(400, 800), (800, 1600)]:
        grid, tg = SpatialGrid("truncated", -5, 5, n), TimeGrid(1.0, nt)
        rho = exact_density(grid, tg, 0.3)
        u = solve_hjb(QuadraticMeanField(), rho, np.zeros(n), 0.3, grid, tg)
        tt, xx = np.meshgrid(tg.t, grid.x, indexing="ij")
        errs.append(sup_diff(u.values, cf.u_exact(tt, xx, 0.3)))
    assert errs[0] <= 0.05
    assert 2 / 1.25 <= errs[0] / errs[1] <= 2 * 1.25


def test_cfl_violation_names_admissible_dt():
    grid, tg = SpatialGrid("torus", 0, 1, 100), TimeGrid(1.0, 10)
    with pytest.raises(ConfigurationError, match="admissible"):
        solve_hjb(constant_drift(1.0), flat_density(grid, tg), np.zeros(100), 0.0, grid, tg)


def test_shape_checks():
    tg = TimeGrid(1.0, 10)
    with pytest.raises(StructuralError):
        solve_hjb(zero_hamiltonian(), np.ones((3, TORUS.n)), np.zeros(TORUS.n), 0.0, TORUS, tg)
    with pytest.raises(StructuralError):
        solve_hjb(zero_hamiltonian(), flat_density(TORUS, tg), np.zeros(5), 0.0, TORUS, tg)


slices = arrays(float, 32, elements=st.floats(-1, 1, allow_nan=False))


@given(g1=slices, bump=arrays(float, 32, elements=st.floats(0, 1, allow_nan=False)), beta=st.floats(0, 1))
def test_monotone_in_terminal_data(g1, bump, beta):
    grid, tg = SpatialGrid("torus", -0.5, 0.5, 32), TimeGrid(0.25, 40)
    rho = flat_density(grid, tg)
    h = LocalSeparable()
    # a fixed dissipation keeps the comparison exact; the local one adapts to each solution
    u1 = solve_hjb(h, rho, g1 * 0.01, beta, grid, tg, scheme="classic")
    u2 = solve_hjb(h, rho, (g1 + bump) * 0.01, beta, grid, tg, scheme="classic")
    assert np.all(u2.values >= u1.values - 1e-14)


@given(g=slices, c=st.floats(-5, 5), beta=st.floats(0, 1))
def test_constant_shift_equivariance(g, c, beta):
    grid, tg = SpatialGrid("torus", -0.5, 0.5, 32), TimeGrid(0.25, 40)
    rho = flat_density(grid, tg)
    u1 = solve_hjb(LocalSeparable(), rho, 0.01 * g, beta, grid, tg)
    u2 = solve_hjb(LocalSeparable(), rho, 0.01 * g + c, beta, grid, tg)
    np.testing.assert_allclose(u2.values, u1.values + c, atol=1e-12 * (1 + abs(c)))


def test_beta_continuity():
    grid, tg = SpatialGrid("torus", -0.5, 0.5, 100), TimeGrid(0.25, 100)
    rho = flat_density(grid, tg)
    g = 0.01 * np.cos(2 * np.pi * grid.x)
    for b, b2 in [(0.2, 0.21), (0.5, 0.52), (0.8, 0.85)]:
        u = solve_hjb(LocalSeparable(), rho, g, b, grid, tg)
        u2 = solve_hjb(LocalSeparable(), rho, g, b2, grid, tg)
        lap = np.max(np.abs(np.diff(u.values, 2, axis=1))) / grid.dx**2
        assert sup_diff(u, u2) <= 5 * abs(b**2 - b2**2) * tg.T * lap


def test_quadratic_gradients_are_beta_independent():
    grid, tg = SpatialGrid("truncated", -5, 5, 400), TimeGrid(1.0, 800)
    u0 = solve_hjb(QuadraticMeanField(), exact_density(grid, tg, 0.0), np.zeros(400), 0.0, grid, tg)
    for beta in (0.1, 0.3):
        u = solve_hjb(QuadraticMeanField(), exact_density(grid, tg, beta), np.zeros(400), beta, grid, tg)
        assert sup_diff(u.gradient(), u0.gradient()) <= 10 * (grid.dx + tg.dt)


def test_lax_friedrichs_hamiltonian_is_monotone():
    h = QuadraticMeanField()
    mu = h.summarize(np.ones(TORUS.n), TORUS)
    pm, pp = np.array([0.3]), np.array([0.5])
    base = lax_friedrichs_hamiltonian(h, 0.0, pm, pp, mu, 1.0)
    # nonincreasing in p+ and nondecreasing in p- when theta >= |dH/dp|
    assert lax_friedrichs_hamiltonian(h, 0.0, pm, pp + 0.1, mu, 1.0) <= base
    assert lax_friedrichs_hamiltonian(h, 0.0, pm + 0.1, pp, mu, 1.0) >= base


def test_classic_scheme_and_its_viscosity():
    grid, tg = SpatialGrid("torus", -0.5, 0.5, 200), TimeGrid(0.25, 200)
    assert numerical_viscosity(grid, tg) == pytest.approx(np.sqrt(2 * 0.005**2 / 0.00125))
    rho = flat_density(grid, tg)
    g = 0.01 * np.cos(2 * np.pi * grid.x)
    u = solve_hjb(LocalSeparable(), rho, g, 0.0, grid, tg, scheme="classic")
    assert u.is_finite()
    with pytest.raises(ConfigurationError):
        solve_hjb(LocalSeparable(), rho, g, 0.0, grid, tg, scheme="weno")


class ZeroLagrangian(HamiltonianModel):
    """Policy-evaluation probe: a convex model whose Lagrangian is identically zero."""

    convexity = 1.0
    quadratic_coef = None

    def lagrangian_max(self, x, q, mu, R=np.inf):
        q = np.asarray(q, dtype=float)
        return np.zeros_like(q), np.zeros_like(q)


def test_linear_solve_zero_data():
    tg = TimeGrid(1.0, 20)
    q = np.zeros((21, TORUS.n))
    u = solve_hjb_linear(ZeroLagrangian(), q, flat_density(TORUS, tg), np.zeros(TORUS.n), 0.3, 5.0, TORUS, tg)
    assert np.all(u.values == 0)


def test_linear_solve_constant_policy_characteristics():
    # -u_t + c u_x = 0 so u(t, x) = g(x - c (T - t)); a policy moves agents with velocity -c
    c, T = 0.5, 0.4
    errs = []
    for n in (100, 200):
        grid, tg = SpatialGrid("torus", 0, 1, n), TimeGrid(T, n)
        g = np.sin(2 * np.pi * grid.x)
        q = np.full((n + 1, n), c)
        u = solve_hjb_linear(ZeroLagrangian(), q, flat_density(grid, tg), g, 0.0, 1.0, grid, tg)
        errs.append(np.max(np.abs(u.values[0] - np.sin(2 * np.pi * (grid.x - c * T)))))
    assert errs[0] < 0.2 and 1.6 <= errs[0] / errs[1] <= 2.4


def test_linear_solve_at_optimal_policy_reproduces_hjb():
    from mfgvv.coupling import improve_policy

    grid, tg = SpatialGrid("truncated", -5, 5, 400), TimeGrid(1.0, 800)
    rho = exact_density(grid, tg, 0.3)
    h = QuadraticMeanField()
    u = solve_hjb(h, rho, np.zeros(400), 0.3, grid, tg)
    q = improve_policy(h, u, rho, grid, R=10.0)
    ul = solve_hjb_linear(h, q, rho, np.zeros(400), 0.3, 10.0, grid, tg)
    assert sup_diff(ul, u) <= 10 * (grid.dx + tg.dt)


def test_linear_solve_rejects_policy_beyond_bound():
    tg = TimeGrid(1.0, 20)
    q = np.full((21, TORUS.n), 2.0)
    with pytest.raises(ConfigurationError):
        solve_hjb_linear(QuadraticMeanField(), q, flat_density(TORUS, tg), np.zeros(TORUS.n), 0.3, 1.0, TORUS, tg)
