"""
Mountain-pass critical point above the r-threshold
==================================================

For r above the threshold pq(1+s)/(p(q-1)+q) the energy blows down along
the anisotropic scaling curve u_t = t^k u(t x), giving an admissible path
for every lambda. The path is deformed until its highest node is a
saddle, which Newton's method then polishes.
"""
from pqsp.energy import J, J_tilde
from pqsp.grid import Gaussian, make_grid
from pqsp.mpa import MpaConfig, initial_path, run_mpa, verify_critical_point
from pqsp.params import validate_params, theorem_regime

e = validate_params(2, 2, 2, 4, 1)
grid = make_grid(15.0, 1024)
print(theorem_regime(e).value, "r_threshold =", e.r_threshold)

###############################################################################
# The starting path: straight segment from 0, then the scaling curve

path = initial_path(e, grid, Gaussian())
print(f"initial path: {len(path.nodes)} nodes, max J = {path.max_energy:.4f}, "
      f"end J = {path.energies[-1]:.3e}")

###############################################################################
# Deform and polish

pt = run_mpa(e, grid, MpaConfig(), seed_profile=Gaussian())
for row in pt.trace[:: max(len(pt.trace) // 8, 1)]:
    print(f"  {row['phase']} it={row['iter']:3d}  max J={row['max_energy']:.6f}"
          f"  criticality={row['criticality']:.2e}")
print(f"level {pt.level:.6f} (started at {pt.initial_max:.6f})")

###############################################################################
# Certificate from a fresh Poisson solve. J~ is the derivative of J along
# the scaling curve, so it vanishes at a critical point.

cert = verify_critical_point(pt.u, e)
for key in ("criticality", "pde_residual", "poisson_residual", "norm_u"):
    print(f"{key:>18} {cert[key]:.3e}")
print(f"{'|J~|/J':>18} {abs(J_tilde(pt.u, e)) / J(pt.u, e).total:.3e}")
print(f"{'Morse index':>18} {pt.morse_index}")
