"""Finite-element LQR gain synthesis and convergence studies."""

from .fem import FemField, FemSpace, QuadRule, build_space, evaluate, quad_rule
from .linalg import SchurForm, cholesky_solve, lu_solve, real_schur, solve_lyapunov
from .models import (
    GainFunction,
    ScalarSystem,
    StateSpace,
    gain_from_care,
    gain_trajectory,
    profiles,
    reference_1d,
    scalar_sigma,
    scalar_study,
    thermal1d_model,
    thermal2d_model,
    wave_model,
)
from .riccati import (
    CareProblem,
    CareSolution,
    DreConfig,
    care_oracle,
    care_residual,
    dre_solve,
    solve_care,
)
from .study import StudyConfig, StudyResult, fit_rate, gain_error, run_study

__version__ = "0.1.0"
