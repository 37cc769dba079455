"""
A genuinely quasilinear run: p = 2.5, q = 2.2
=============================================

With p > 2 the solution concentrates strongly (here ||u|| is several
hundred and the core half-width about 0.1), so the grid is graded
geometrically towards the origin. Expect a run of one to two minutes.
"""
from pqsp.grid import Gaussian, make_grid
from pqsp.mpa import MpaConfig, run_mpa
from pqsp.params import validate_params

rt = validate_params(2.5, 2.2, 2.3, 3.5, 1.0).r_threshold
e = validate_params(2.5, 2.2, 2.3, 1.05 * rt, 1.0)
grid = make_grid(15.0, 1024, "geometric(1.005)")
print(f"r = {e.r:.6f} (threshold {rt:.6f}), first cell h0 = {grid.h[0]:.2e}")

pt = run_mpa(e, grid, MpaConfig(criticality_tol=1e-5), seed_profile=Gaussian())
s = pt.summary()
for key in ("level", "norm_u", "criticality", "pde_residual",
            "j_tilde_ratio", "morse_index", "iterations", "newton_steps"):
    print(f"{key:>14} {s[key]}")
