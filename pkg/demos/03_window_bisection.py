"""
Small-lambda window below the r-threshold
=========================================

Below the threshold the scaling argument fails and the nonlocal term is
switched off outside ||u|| < M by the cut-off h(||u||^2 / M^2). A
mountain-pass point of the cut-off energy with ||u|| < M/2 sits on the
plateau h = 1, so it is a genuine critical point of J. This only happens
for small lambda; the bisection below locates where it stops.
"""
import numpy as np

from pqsp.energy import CutoffConfig, J, J_M, J_M_grad, J_grad
from pqsp.grid import Gaussian, make_grid
from pqsp.mpa import MpaConfig, lambda_bisection
from pqsp.params import validate_params

e = validate_params(2, 2, 2, 2.5, 1e-3)
grid = make_grid(15.0, 1024)
res = lambda_bisection(e, grid, MpaConfig(), lam_ok=1e-3, lam_fail=0.25,
                       seed_profile=Gaussian())

print(f"M = {res.M:.1f}")
print(f"{'lambda':>10} {'outcome':>16} {'||u||':>9} {'level':>10}")
for row in res.rows:
    print(f"{row['lambda']:10.5f} {row['outcome']:>16} "
          f"{row.get('norm_u', float('nan')):9.3f} "
          f"{row.get('level', float('nan')):10.4f}")
print(f"bracket [{res.lam_ok:.5f}, {res.lam_fail:.5f}], ratio {res.ratio:.3f}")

###############################################################################
# On the plateau the cut-off energy and its gradient are J and J' exactly

u, lam = res.point_ok.u, res.lam_ok
eo, c = e.with_lambda(lam), CutoffConfig(M=res.M)
print("J_M == J:", J_M(u, eo, c) == J(u, eo))
print("J_M' == J':", np.array_equal(J_M_grad(u, eo, c).covector,
                                    J_grad(u, eo).covector))
