"""Unique solution of ``-Delta_q phi = |u|^s`` by convex minimization.

The solver minimizes the discrete energy

    I(phi) = (1/q) int (|grad phi|^2 + eps^2)^(q/2) dx - int |u|^s phi dx

over fields with ``phi(R) = 0``. The energy is strictly convex, so its
minimizer is the unique discrete solution; nonnegativity is not imposed
and is checked afterwards.

Descent is preconditioned nonlinear conjugate gradients (Polak-Ribiere+)
with Armijo backtracking. The preconditioner is the weighted Laplacian
obtained by freezing ``(|grad phi|^2 + eps^2)^((q-2)/2)`` at the current
iterate; it is tridiagonal in the radial setting.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .grid import (FOUR_PI, GridMismatch, RadialField, _even_spline,
                   apply_divergence, d1q_norm, gradient_values,
                   stiffness_bands)

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5


class NoConvergence(RuntimeError):
    def __init__(self, message, iterations=None, residual=None, best=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.best = best


class NegativityViolation(RuntimeError):
    pass


class MonotonicityViolation(RuntimeError):
    pass


@dataclass
class PoissonProblem:
    """Source ``u`` and solver settings.

    ``epsilon=None`` picks ``eps_factor`` times a gradient scale estimated
    from the source and runs the halving continuation; an explicit value
    is used as given (no continuation unless ``continuation=True``).
    """

    u: RadialField
    q: float
    s: float
    epsilon: float | None = None
    tol: float = 1e-8
    max_iters: int = 500
    eps_factor: float = 1e-6
    continuation: bool | None = None
    max_halvings: int = 30
    phi0: RadialField | None = None

    def __post_init__(self):
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.q > 1:
            raise ValueError("q must exceed 1")


@dataclass
class PoissonSolution:
    phi: RadialField
    residual_norm: float
    iterations: int
    energy: float
    epsilon: float
    eps_schedule: list = field(default_factory=list)
    certificate: dict = field(default_factory=dict)

    def diagnostics(self):
        return {"iterations": self.iterations,
                "residual_norm": self.residual_norm,
                "energy": self.energy, "epsilon": self.epsilon,
                "epsilon_schedule": list(self.eps_schedule),
                "certificate": dict(self.certificate)}


# -- pointwise pieces ---------------------------------------------------------

def flux(g, q, eps):
    """Regularized ``|g|^(q-2) g``."""
    if eps == 0.0:
        return np.sign(g) * np.abs(g) ** (q - 1.0)
    return g * (g * g + eps * eps) ** (0.5 * (q - 2.0))


def density(g, q, eps):
    return (g * g + eps * eps) ** (0.5 * q)


def density_increment(g, dg, q, eps):
    """``density(g + dg) - density(g)`` without cancellation."""
    y = g * g + eps * eps
    dy = dg * (2.0 * g + dg)
    out = np.empty_like(g)
    pos = y > 0
    ratio = dy[pos] / y[pos]
    out[pos] = y[pos] ** (0.5 * q) * np.expm1(0.5 * q * np.log1p(ratio))
    out[~pos] = np.abs(dg[~pos]) ** q
    return out


def signed_power(x, a):
    """``|x|^(a-1) x`` that stays finite at 0 for ``a > 1``."""
    return np.sign(x) * np.abs(x) ** (a - 1.0)


# -- linear algebra helpers ---------------------------------------------------

@functools.lru_cache(maxsize=32)
def laplace_bands(grid):
    ab = stiffness_bands(grid, np.ones(grid.n - 1))
    ab.flags.writeable = False
    return ab


def laplace_solve(grid, rhs_free):
    """Solve the q=2 stiffness system on free nodes (``phi(R) = 0``)."""
    return solveh_banded(laplace_bands(grid), rhs_free, check_finite=False)


def laplace_dual_norm(grid, cov_free):
    """``sqrt(g^T K^-1 g)`` for the unit-weight stiffness matrix ``K``."""
    if not np.any(cov_free):
        return 0.0
    return math.sqrt(max(float(np.dot(cov_free, laplace_solve(grid, cov_free))),
                         0.0))


def source_values(u, s):
    return np.abs(u.values) ** s


def _with_boundary(x):
    return np.concatenate([x, [0.0]])


# -- energy -------------------------------------------------------------------

def _energy_values(grid, phi_vals, f, q, eps):
    g = gradient_values(grid, phi_vals)
    return (grid.integrate_cells(density(g, q, eps)) / q
            - grid.integrate(f * phi_vals))


def poisson_energy(phi, prob):
    """``(1/q) int (|grad phi|^2 + eps^2)^(q/2) - int |u|^s phi``."""
    if not phi.grid.same_as(prob.u.grid):
        raise GridMismatch("phi and u live on different grids")
    eps = prob.epsilon or 0.0
    return _energy_values(phi.grid, phi.values, source_values(prob.u, prob.s),
                          prob.q, eps)


def q_laplacian_covector(phi, q, eps=0.0):
    """Covector of ``<-Delta_q phi, v> = int |grad phi|^(q-2) grad phi . grad v``."""
    g = gradient_values(phi.grid, phi.values)
    return apply_divergence(phi.grid, flux(g, q, eps))


def gradient_scale(grid, f, q):
    """Typical ``|grad phi|`` of the solution, read off the q=2 problem.

    In the radial setting ``|phi'|^(q-1)`` equals ``|psi'|`` for the
    Newton potential ``psi``, so this scales exactly like the solution.
    """
    b = (grid.weights * f)[:-1]
    if not np.any(b):
        return 0.0
    psi = _with_boundary(laplace_solve(grid, b))
    return float(np.max(np.abs(gradient_values(grid, psi)))) ** (1.0 / (q - 1.0))


# -- solver -------------------------------------------------------------------

class _Descent:
    def __init__(self, grid, f, q, eps):
        self.grid, self.q, self.eps = grid, q, eps
        self.b = (grid.weights * f)[:-1]
        self.bnorm = laplace_dual_norm(grid, self.b)
        self.pc_eps = eps

    def grad(self, x):
        g = gradient_values(self.grid, _with_boundary(x))
        return apply_divergence(self.grid, flux(g, self.q, self.eps))[:-1] - self.b

    def precondition(self, x, r):
        g = gradient_values(self.grid, _with_boundary(x))
        a = (g * g + self.pc_eps ** 2) ** (0.5 * (self.q - 2.0))
        if self.q == 2.0:
            return laplace_solve(self.grid, r)
        ab = stiffness_bands(self.grid, a)
        return solveh_banded(ab, r, check_finite=False)

    def energy_increment(self, x, d, alpha):
        grid = self.grid
        g = gradient_values(grid, _with_boundary(x))
        dg = alpha * gradient_values(grid, _with_boundary(d))
        inc = density_increment(g, dg, self.q, self.eps)
        return (grid.integrate_cells(inc) / self.q
                - alpha * float(np.dot(self.b, d)))

    def residual(self, gvec):
        return laplace_dual_norm(self.grid, gvec) / self.bnorm

    def run(self, x, tol, max_iters):
        gvec = self.grad(x)
        z = self.precondition(x, gvec)
        d = -z
        res = self.residual(gvec)
        it = 0
        while res > tol:
            if it >= max_iters:
                raise NoConvergence(
                    f"q-Poisson solver stopped after {it} iterations with "
                    f"residual {res:.3e}", iterations=it, residual=res,
                    best=x)
            slope = float(np.dot(gvec, d))
            if slope >= 0.0:
                d = -z
                slope = float(np.dot(gvec, d))
            alpha = 1.0
            for _ in range(80):
                if self.energy_increment(x, d, alpha) <= ARMIJO_C1 * alpha * slope:
                    break
                alpha *= BACKTRACK
            else:
                raise NoConvergence(
                    f"Armijo backtracking failed at iteration {it} "
                    f"(residual {res:.3e})", iterations=it, residual=res,
                    best=x)
            x = x + alpha * d
            gnew = self.grad(x)
            znew = self.precondition(x, gnew)
            beta = max(0.0, float(np.dot(gnew, znew - z)) / float(np.dot(gvec, z)))
            d = -znew + beta * d
            gvec, z = gnew, znew
            res = self.residual(gvec)
            it += 1
        return x, res, it


def _initial_guess(grid, f, q, eps):
    b = (grid.weights * f)[:-1]
    psi = laplace_solve(grid, b)
    g = gradient_values(grid, _with_boundary(psi))
    A = grid.integrate_cells(density(g, q, eps))
    B = float(np.dot(b, psi))
    if A <= 0 or B <= 0:
        return np.zeros_like(b)
    return (B / A) ** (1.0 / (q - 1.0)) * psi


def solve_q_poisson(prob):
    """Minimize the q-Poisson energy for ``prob``.

    Returns a :class:`PoissonSolution` whose ``residual_norm`` is the dual
    (unit-weight stiffness) norm of the energy gradient relative to that of
    the source. Raises :class:`NoConvergence` or
    :class:`NegativityViolation`.
    """
    u, q, s = prob.u, float(prob.q), float(prob.s)
    grid = u.grid
    f = source_values(u, s)
    if prob.epsilon == 0.0 and q < 2.0:
        raise ValueError("q < 2 needs epsilon > 0 (singular weight)")
    if not np.any(f[:-1]):
        phi = RadialField(grid, np.zeros(grid.n))
        return PoissonSolution(phi, 0.0, 0, 0.0, prob.epsilon or 0.0, [],
                               _certificate(phi, u, q, s, 0.0, 0.0))
    if q == 2.0:
        eps = 0.0
        continuation = False
    elif prob.epsilon is None:
        eps = prob.eps_factor * gradient_scale(grid, f, q)
        continuation = True if prob.continuation is None else prob.continuation
    else:
        eps = float(prob.epsilon)
        continuation = bool(prob.continuation)

    if prob.phi0 is not None:
        if not prob.phi0.grid.same_as(grid):
            raise GridMismatch("initial guess lives on a different grid")
        x = np.array(prob.phi0.values[:-1], dtype=float)
    else:
        x = _initial_guess(grid, f, q, eps)

    inner_tol = 0.1 * prob.tol if continuation else prob.tol
    schedule, total = [], 0
    solver = _Descent(grid, f, q, eps)
    x, res, its = solver.run(x, inner_tol, prob.max_iters)
    schedule.append(eps)
    total += its
    if continuation:
        for _ in range(prob.max_halvings):
            eps *= 0.5
            solver = _Descent(grid, f, q, eps)
            xn, res, its = solver.run(x, inner_tol, prob.max_iters)
            schedule.append(eps)
            total += its
            moved = np.max(np.abs(xn - x))
            x = xn
            if moved <= prob.tol * np.max(np.abs(x)):
                break
        else:
            raise NoConvergence(
                "epsilon continuation did not settle", iterations=total,
                residual=res, best=x)

    vals = _with_boundary(x)
    top = float(np.max(vals))
    if float(np.min(vals)) < -1e-6 * max(top, 0.0):
        raise NegativityViolation(
            f"min phi = {np.min(vals):.3e} against max phi = {top:.3e}")
    phi = RadialField(grid, vals)
    energy = _energy_values(grid, vals, f, q, eps)
    return PoissonSolution(phi, res, total, energy, eps, schedule,
                           _certificate(phi, u, q, s, eps, res))


def far_field_offset(R, mass, q):
    """Value at R of the whole-space radial solution for a source in the ball.

    Outside the support ``r^2 |phi'|^(q-1) = mass / (4 pi)``, so the
    whole-space solution equals the Dirichlet one plus this constant.
    """
    expo = 1.0 / (q - 1.0)
    return ((mass / FOUR_PI) ** expo * R ** (1.0 - 2.0 * expo)
            / (2.0 * expo - 1.0))


def _certificate(phi, u, q, s, eps, res):
    grid = phi.grid
    f = source_values(u, s)
    pairing = grid.integrate(f * phi.values)
    dq = d1q_norm(phi, q)
    tail = far_field_offset(grid.R, grid.integrate(f), q)
    return {
        "virial_ratio": dq ** q / pairing if pairing > 0 else 1.0,
        "coercivity": dq ** (q - 1.0),
        "min_over_max": (float(np.min(phi.values)) / float(np.max(phi.values))
                         if np.max(phi.values) > 0 else 0.0),
        "far_field_offset": tail,
        "residual_norm": res,
    }


# -- oracles ------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _source_function(u, s):
    if u.profile is not None:
        prof = u.profile
        return lambda r: np.abs(prof(r)) ** s
    spline = _even_spline(u)
    return lambda r: np.abs(spline(r)) ** s


def _cell_points(grid):
    a, h = grid.nodes[:-1, None], grid.h[:, None]
    return a + 0.5 * h * (_GL_X[None, :] + 1.0), 0.5 * h * _GL_W[None, :]


def oracle_q2(u, s):
    """Truncated radial Newton potential of ``|u|^s`` (``phi(R) = 0``).

    ``phi(r) = (1/r) int_0^r f rho^2 + int_r^R f rho - (1/R) int_0^R f rho^2``
    evaluated with 8-point Gauss-Legendre quadrature per cell; analytic
    profiles are evaluated exactly, sampled fields through a cubic spline.
    """
    grid = u.grid
    f = _source_function(u, s)
    x, w = _cell_points(grid)
    fx = f(x)
    c2 = np.concatenate([[0.0], np.cumsum(np.sum(w * fx * x * x, axis=1))])
    c1 = np.concatenate([[0.0], np.cumsum(np.sum(w * fx * x, axis=1))])
    r = grid.nodes
    inner = np.zeros_like(r)
    inner[1:] = c2[1:] / r[1:]
    phi = inner + (c1[-1] - c1) - c2[-1] / grid.R
    phi[-1] = 0.0
    return RadialField(grid, phi)


def oracle_flux(u, q, s):
    """Radial q-Poisson solution from the flux identity.

    For radial fields ``r^2 |phi'|^(q-1) = int_0^r |u|^s rho^2 d rho``, so
    ``phi(r) = int_r^R (C(rho)/rho^2)^(1/(q-1)) d rho`` with nested
    Gauss-Legendre quadrature. Valid for any ``q > 1``.
    """
    grid = u.grid
    f = _source_function(u, s)
    x, w = _cell_points(grid)
    fx = f(x)
    c2 = np.concatenate([[0.0], np.cumsum(np.sum(w * fx * x * x, axis=1))])
    a = grid.nodes[:-1, None, None]
    xo = x[:, :, None]
    xi = a + 0.5 * (xo - a) * (_GL_X[None, None, :] + 1.0)
    wi = 0.5 * (xo - a) * _GL_W[None, None, :]
    partial = np.sum(wi * f(xi) * xi * xi, axis=2)
    cx = c2[:-1, None] + partial
    integrand = (np.maximum(cx, 0.0) / (x * x)) ** (1.0 / (q - 1.0))
    cells = np.sum(w * integrand, axis=1)
    phi = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
    return RadialField(grid, phi)


def monotonicity_certificate(v1, v2, q):
    """Pairing ``<-Delta_q v1 - (-Delta_q v2), v1 - v2>`` and ratios.

    For ``q >= 2`` the ratio ``pairing / ||v1 - v2||_{D^{1,q}}^q`` is an
    empirical lower constant; for ``q < 2`` the ratio uses the weighted
    form with ``(|grad v1| + |grad v2|)^(2-q)``.
    """
    if not v1.grid.same_as(v2.grid):
        raise GridMismatch("fields live on different grids")
    grid = v1.grid
    g1 = gradient_values(grid, v1.values)
    g2 = gradient_values(grid, v2.values)
    dg = g1 - g2
    if not np.any(dg):
        raise ValueError("v1 and v2 coincide")
    pairing = grid.integrate_cells((flux(g1, q, 0.0) - flux(g2, q, 0.0)) * dg)
    dnorm_q = grid.integrate_cells(np.abs(dg) ** q)
    cert = {"pairing": pairing, "dist_q": dnorm_q}
    if q >= 2.0:
        cert["c_q"] = pairing / dnorm_q
    else:
        tot = grid.integrate_cells((np.abs(g1) + np.abs(g2)) ** q)
        cert["c_q"] = (pairing ** (q / 2.0) * tot ** ((2.0 - q) / 2.0)
                       / dnorm_q) ** (2.0 / q)
    if not pairing > 0.0:
        raise MonotonicityViolation(
            f"pairing {pairing!r} is not positive (q={q})")
    return cert
