"""Finite-difference solvers and diagnostics for 1-D mean field games in the small-noise limit."""

from .closed_form import (
    density_variance,
    grad_u_exact,
    rho_exact,
    rho_exact_params,
    u_exact,
    viscosity_gap_exact,
    w1_gap_exact,
)
from .coupling import (
    MFGProblem,
    MFGSolution,
    PolicyField,
    fixed_point_gap,
    residuals,
    solve_mfg_fictitious_play,
    solve_mfg_policy_iteration,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    MFGError,
    StructuralError,
    UnsupportedModelError,
)
from .fokker_planck import make_initial_density, solve_fp, solve_fp_policy
from .grid import DensityTrajectory, SpaceTimeField, SpatialGrid, TimeGrid
from .hamiltonian import (
    Congestion,
    CustomHamiltonian,
    HamiltonianModel,
    LocalSeparable,
    MeasureSummary,
    QuadraticMeanField,
    make_model,
)
from .hjb import solve_hjb, solve_hjb_linear
from .metrics import RateFit, loglog_slope, moments, sup_diff, w1_grid, w1_sup_t
from .particles import FBSDEPath, ParticleEnsemble, empirical_w1, simulate_fbsde, simulate_nplayer

__all__ = [name for name in dir() if not name.startswith("_")]
