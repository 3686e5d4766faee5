import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfgvv import closed_form as cf
from mfgvv.coupling import fp_weak_residual
from mfgvv.errors import ConfigurationError, StructuralError
from mfgvv.fokker_planck import (
    lax_friedrichs_flux_divergence,
    make_initial_density,
    solve_fp,
    solve_fp_face_velocity,
    solve_fp_policy,
    upwind_flux_divergence,
)
from mfgvv.grid import SpatialGrid, TimeGrid
from mfgvv.hamiltonian import QuadraticMeanField
from mfgvv.metrics import moments, w1_sup_t

LINE = SpatialGrid("truncated", -5, 5, 400)


def test_gaussian_initial_density():
    rho = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.04}, LINE)
    assert rho[0] == rho[-1] == 0.0
    assert rho.sum() * LINE.dx == pytest.approx(1.0, abs=1e-14)
    m, v = moments(rho, LINE)
    assert m == pytest.approx(0.0, abs=1e-12)
    # midpoint sampling of a smooth density is spectrally accurate
    assert v == pytest.approx(0.04, rel=1e-9)


def test_point_and_custom_initial_density():
    rho = make_initial_density({"kind": "point", "at": 1.0}, LINE)
    assert np.count_nonzero(rho) == 1 and rho[LINE.cell_index(1.0)] == 1 / LINE.dx
    custom = make_initial_density({"kind": "custom", "values": [2.0] * LINE.n}, LINE)
    np.testing.assert_allclose(custom, 0.1)


@pytest.mark.parametrize(
    "params, err",
    [
        ({"kind": "gaussian", "mean": 0.0, "variance": 0.0}, ConfigurationError),
        ({"kind": "gaussian", "mean": 9.0, "variance": 0.1}, ConfigurationError),
        ({"kind": "point", "at": -7.0}, ConfigurationError),
        ({"kind": "custom", "values": [1.0, 2.0]}, StructuralError),
        ({"kind": "custom", "values": [-1.0] + [1.0] * 399}, ConfigurationError),
        ({"kind": "custom", "values": [0.0] * 400}, ConfigurationError),
        ({"kind": "uniform"}, ConfigurationError),
    ],
)
def test_initial_density_errors(params, err):
    with pytest.raises(err):
        make_initial_density(params, LINE)


def test_no_drift_no_noise_is_stationary():
    tg = TimeGrid(1.0, 50)
    m0 = make_initial_density({"kind": "gaussian", "mean": 0.3, "variance": 0.2}, LINE)
    rho = solve_fp_face_velocity(np.zeros((51, len(LINE.faces))), m0, 0.0, LINE, tg)
    np.testing.assert_array_equal(rho.values[-1], m0)


def test_uniform_density_on_torus_stays_uniform():
    grid, tg = SpatialGrid("torus", 0, 1, 64), TimeGrid(0.5, 100)
    b = np.full((101, len(grid.faces)), 0.7)
    rho = solve_fp_face_velocity(b, np.ones(64), 0.4, grid, tg)
    np.testing.assert_allclose(rho.values, 1.0, atol=1e-13)


@pytest.mark.parametrize("c", [0.8, -1.3])
def test_constant_drift_moves_mean_by_c_dt_per_step(c):
    tg = TimeGrid(0.5, 100)
    m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.1}, LINE)
    rho = solve_fp_face_velocity(np.full((101, len(LINE.faces)), c), m0, 0.3, LINE, tg)
    means = np.array([moments(r, LINE)[0] for r in rho.values])
    np.testing.assert_allclose(np.diff(means), c * tg.dt, atol=1e-12)


def test_heat_equation_variance_grows_linearly():
    beta, tg = 0.6, TimeGrid(1.0, 400)
    m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.1}, LINE)
    rho = solve_fp_face_velocity(np.zeros((401, len(LINE.faces))), m0, beta, LINE, tg)
    s0 = moments(m0, LINE)[1]
    for k in (100, 400):
        assert moments(rho.values[k], LINE)[1] == pytest.approx(s0 + beta**2 * tg.t[k], rel=0.02)


def test_policy_moves_agents_against_q():
    tg = TimeGrid(0.5, 100)
    m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.1}, LINE)
    rho = solve_fp_policy(np.full((101, LINE.n), 1.0), m0, 0.0, LINE, tg)
    assert moments(rho.values[-1], LINE)[0] == pytest.approx(-0.5, abs=1e-10)


drifts = arrays(float, (21, 31), elements=st.floats(-3, 3, allow_nan=False))
masses = arrays(float, 32, elements=st.floats(0, 1, allow_nan=False)).filter(lambda a: a.sum() > 0.1)


@given(b=drifts, m=masses, beta=st.floats(0, 1), periodic=st.booleans())
def test_mass_and_positivity(b, m, beta, periodic):
    kind = "torus" if periodic else "truncated"
    grid, tg = SpatialGrid(kind, 0, 1, 32), TimeGrid(0.2, 20)
    if periodic:
        b = np.concatenate([b, b[:, :1]], axis=1)
    m0 = make_initial_density({"kind": "custom", "values": list(m)}, grid)
    # dt * outflow / dx = 0.01 * 6 * 32 can exceed 1; scale the drift into the admissible range
    rho = solve_fp_face_velocity(b / 4, m0, beta, grid, tg)
    np.testing.assert_allclose(rho.masses(), 1.0, atol=1e-12)
    assert rho.values.min() >= -1e-12


@given(rho=masses, b=arrays(float, 32, elements=st.floats(-3, 3, allow_nan=False)))
def test_flux_divergences_sum_to_zero(rho, b):
    grid = SpatialGrid("torus", 0, 1, 32)
    assert abs(upwind_flux_divergence(rho, b, grid).sum()) < 1e-10
    assert abs(lax_friedrichs_flux_divergence(rho, b, grid, 0.01).sum()) < 1e-10
    line = SpatialGrid("truncated", 0, 1, 32)
    assert abs(upwind_flux_divergence(rho, b[:-1], line).sum()) < 1e-10
    assert abs(lax_friedrichs_flux_divergence(rho, b[:-1], line, 0.01).sum()) < 1e-10


def exact_value(grid, tg, beta):
    tt, xx = np.meshgrid(tg.t, grid.x, indexing="ij")
    return cf.u_exact(tt, xx, beta, 0.0)


def test_closed_form_drift_reproduces_closed_form_density():
    beta = 0.3
    errs = []
    for n, nt in [(200, 400), (400, 800)]:
        grid, tg = SpatialGrid("truncated", -5, 5, n), TimeGrid(1.0, nt)
        m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.04}, grid)
        rho = solve_fp(QuadraticMeanField(), exact_value(grid, tg, beta), m0, beta, grid, tg)
        tt, xx = np.meshgrid(tg.t, grid.x, indexing="ij")
        ref = cf.rho_exact(tt, xx, beta, 0.0, 0.04)
        errs.append(w1_sup_t(rho, ref, grid))
    assert errs[1] < errs[0] < 0.02


def test_weak_residual_decays_under_refinement():
    beta = 0.3
    res = []
    for n, nt in [(200, 400), (400, 800)]:
        grid, tg = SpatialGrid("truncated", -5, 5, n), TimeGrid(1.0, nt)
        u = exact_value(grid, tg, beta)
        m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.04}, grid)
        from mfgvv.grid import SpaceTimeField

        uf = SpaceTimeField(u, grid, tg, beta=beta)
        rho = solve_fp(QuadraticMeanField(), uf, m0, beta, grid, tg)
        res.append(fp_weak_residual(QuadraticMeanField(), uf, rho, m0))
    assert res[1] < res[0]


def test_classic_scheme_conserves_mass():
    grid, tg = SpatialGrid("torus", -0.5, 0.5, 100), TimeGrid(0.25, 100)
    m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.01}, grid)
    u = np.tile(0.1 * np.cos(2 * np.pi * grid.x), (101, 1))
    rho = solve_fp(QuadraticMeanField(), u, m0, 0.2, grid, tg, scheme="classic")
    np.testing.assert_allclose(rho.masses(), 1.0, atol=1e-12)


def test_cfl_violation_and_shape_errors():
    tg = TimeGrid(1.0, 10)
    m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": 0.1}, LINE)
    with pytest.raises(ConfigurationError, match="admissible"):
        solve_fp_face_velocity(np.full((11, len(LINE.faces)), 5.0), m0, 0.0, LINE, tg)
    with pytest.raises(StructuralError):
        solve_fp_face_velocity(np.zeros((11, 3)), m0, 0.0, LINE, tg)
    with pytest.raises(StructuralError):
        solve_fp_policy(np.zeros((11, LINE.n)), m0[:5], 0.0, LINE, tg)
    with pytest.raises(ConfigurationError):
        solve_fp_policy(np.zeros((11, LINE.n)), m0, -0.1, LINE, tg)
