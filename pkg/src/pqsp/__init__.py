"""Radial numerics for the quasilinear (p,q)-Schrodinger-Poisson system.

    -Delta_p u + |u|^(p-2) u + lam phi |u|^(s-2) u = |u|^(r-2) u
    -Delta_q phi = |u|^s                                   in R^3

Modules: :mod:`params` (admissible exponents and derived constants),
:mod:`grid` (radial P1 fields and quadrature), :mod:`qpoisson` (the
q-Poisson solver and its oracles), :mod:`energy` (reduced energy, gradient
and cut-off variant), :mod:`mpa` (mountain-pass search and certificates),
:mod:`io` and :mod:`cli`.
"""
from .params import (ExponentSet, RangeError, Regime, admissible_intervals,
                     theorem_regime, validate_params)
from .grid import (Bump, ConfigError, ExtrapolationWarning, Gaussian,
                   GridMismatch, RadialField, RadialGrid, from_profile,
                   make_grid, rescale_field)
from .qpoisson import (NegativityViolation, NoConvergence, PoissonProblem,
                       PoissonSolution, oracle_flux, oracle_q2,
                       solve_q_poisson)
from .energy import (CutoffConfig, J, J_M, J_M_grad, J_grad, J_tilde,
                     scaled_energy_closed_form, scaling_map)
from .mpa import (CriticalPoint, MpaConfig, MpaPath, PathNotAdmissible,
                  WindowViolation, initial_path, lambda_bisection, run_mpa,
                  verify_critical_point)

__version__ = "0.1.0"
