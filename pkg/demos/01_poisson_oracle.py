"""
The q-Poisson solve against its quadrature oracles
==================================================

The potential phi_u solves -Delta_q phi = |u|^s with phi(R) = 0. For q = 2
it is a truncated Newton potential, and for radial sources any q has a
closed flux formula. Both are computed here by Gauss-Legendre quadrature,
independently of the descent solver, and compared with it.
"""
import numpy as np

from pqsp.grid import Gaussian, from_profile, make_grid
from pqsp.qpoisson import (PoissonProblem, oracle_flux, oracle_q2,
                           solve_q_poisson)

grid = make_grid(20.0, 4096)
u = from_profile(grid, Gaussian(1.0, 1.0))

###############################################################################
# q = 2: Newton potential with the same truncation

sol = solve_q_poisson(PoissonProblem(u, 2.0, 2.0))
ref = oracle_q2(u, 2.0)
err = np.max(np.abs(sol.phi.values - ref.values)) / np.max(ref.values)
print(f"q=2   iterations={sol.iterations:3d}  linf_rel={err:.2e}")

###############################################################################
# q != 2: the flux identity r^2 |phi'|^(q-1) = int_0^r |u|^s rho^2 d rho
# The epsilon schedule shows the regularization being driven to zero.

for q in (1.6, 2.5, 2.9):
    sol = solve_q_poisson(PoissonProblem(u, q, 2.0))
    ref = oracle_flux(u, q, 2.0)
    err = np.max(np.abs(sol.phi.values - ref.values)) / np.max(ref.values)
    print(f"q={q:<4} iterations={sol.iterations:3d}  linf_rel={err:.2e}  "
          f"eps {sol.eps_schedule[0]:.1e} -> {sol.eps_schedule[-1]:.1e}")

###############################################################################
# Homogeneity in the source: phi_{tu} = t^(s/(q-1)) phi_u

q, s, t = 2.5, 2.0, 2.0
a = solve_q_poisson(PoissonProblem(u, q, s)).phi.values
b = solve_q_poisson(PoissonProblem(u * t, q, s)).phi.values
print("homogeneity discrepancy",
      np.max(np.abs(b - t ** (s / (q - 1)) * a)) / np.max(np.abs(b)))
