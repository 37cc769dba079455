"""Reduced energy, its derivative, and the auxiliary functionals.

All functionals act on fields with ``u(R) = 0``; covectors are returned on
every node with the entry at R set to zero. Writing ``V_j`` for cell
volumes, ``w_i`` for nodal weights and ``g = du/dr`` on cells,

    kinetic  = (1/p) sum V |g|^p          mass  = (1/p) sum w |u|^p
    nonlocal = lam (q-1)/(q s) sum w phi_u |u|^s
    local    = (1/r) sum w |u|^r

and ``J = kinetic + mass + nonlocal - local``. Because ``phi_u`` minimizes
the discrete Poisson energy, the derivative of the nonlocal term is
``lam w phi_u |u|^(s-2) u``; no derivative of ``phi_u`` enters.

``phi_u`` here is the whole-space potential of the ball-supported source:
the Dirichlet solution plus the constant exterior tail (see
:func:`pqsp.qpoisson.far_field_offset`). The constant depends on ``u``
only through ``int |u|^s`` and its contribution to the derivative is again
``lam w c |u|^(s-2) u``, so the formula above stays exact. Pass
``far_field=False`` to work with the bare Dirichlet potential.
"""
from __future__ import annotations

import functools
import hashlib
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .grid import RadialField, gradient_values, stiffness_bands
from .params import Regime, theorem_regime
from .qpoisson import (PoissonProblem, apply_divergence, far_field_offset,
                       signed_power, solve_q_poisson)


class RegimeError(ValueError):
    pass


class ProfileRequired(ValueError):
    pass


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    mass: float
    nonlocal_: float
    local: float
    total: float

    @classmethod
    def from_terms(cls, kinetic, mass, nonlocal_, local):
        return cls(kinetic, mass, nonlocal_, local,
                   kinetic + mass + nonlocal_ - local)

    def to_dict(self):
        return {"kinetic": self.kinetic, "mass": self.mass,
                "nonlocal": self.nonlocal_, "local": self.local,
                "total": self.total}


@dataclass(frozen=True)
class Gradient:
    """Derivative of a functional at a field.

    ``covector[i]`` is the derivative with respect to the nodal value
    ``u_i``; ``field`` is its representative ``covector / w`` in the
    quadrature inner product; ``dual_norm`` is the H^1-dual norm of the
    covector.
    """

    field: RadialField
    covector: np.ndarray
    dual_norm: float


# -- phi_u cache --------------------------------------------------------------

class PhiCache:
    """Poisson solutions keyed by a content hash of the source field."""

    def __init__(self, maxsize=128):
        self.maxsize = maxsize
        self._data = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(u, q, s, tol):
        h = hashlib.sha1(u.values.tobytes())
        h.update(u.grid.nodes.tobytes())
        return (h.hexdigest(), float(q), float(s), float(tol))

    def get(self, key):
        with self._lock:
            sol = self._data.get(key)
            if sol is not None:
                self._data.move_to_end(key)
                self.hits += 1
            else:
                self.misses += 1
            return sol

    def put(self, key, sol):
        with self._lock:
            self._data[key] = sol
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def clear(self):
        with self._lock:
            self._data.clear()


DEFAULT_CACHE = PhiCache()
POISSON_TOL = 1e-10


def phi_of(u, e, *, tol=POISSON_TOL, cache=DEFAULT_CACHE):
    """The Poisson solution ``phi_u`` for ``-Delta_q phi = |u|^s``."""
    key = None
    if cache is not None:
        key = PhiCache.key(u, e.q, e.s, tol)
        sol = cache.get(key)
        if sol is not None:
            return sol
    sol = solve_q_poisson(PoissonProblem(u, e.q, e.s, tol=tol))
    if cache is not None:
        cache.put(key, sol)
    return sol


def potential(u, e, *, tol=POISSON_TOL, cache=DEFAULT_CACHE, far_field=True):
    """Nodal values of the potential entering the reduced energy."""
    vals = phi_of(u, e, tol=tol, cache=cache).phi.values
    if far_field:
        mass = u.grid.integrate(np.abs(u.values) ** e.s)
        vals = vals + far_field_offset(u.grid.R, mass, e.q)
    return vals


# -- base integrals -----------------------------------------------------------

def _integrals(u, e, tol, cache, far_field=True):
    grid = u.grid
    g = gradient_values(grid, u.values)
    absu = np.abs(u.values)
    grad_p = grid.integrate_cells(np.abs(g) ** e.p)
    mass_p = grid.integrate(absu ** e.p)
    local_r = grid.integrate(absu ** e.r)
    phi = None
    coupling = 0.0
    if e.lam != 0.0:
        phi = potential(u, e, tol=tol, cache=cache, far_field=far_field)
        coupling = grid.integrate(phi * absu ** e.s)
    return grad_p, mass_p, coupling, local_r, phi


def _breakdown(e, grad_p, mass_p, coupling, local_r, zfactor=1.0):
    nl = e.lam * (e.q - 1.0) / (e.q * e.s) * coupling
    return EnergyBreakdown.from_terms(grad_p / e.p, mass_p / e.p,
                                      zfactor * nl, local_r / e.r)


def J(u, e, *, tol=POISSON_TOL, cache=DEFAULT_CACHE, far_field=True):
    """Term-by-term reduced energy of ``u``."""
    return _breakdown(e, *_integrals(u, e, tol, cache, far_field)[:4])


# -- gradients ----------------------------------------------------------------

def _norm_covector(u, p):
    """Derivative of ``(1/p) ||u||^p`` (kinetic plus mass terms)."""
    grid = u.grid
    g = gradient_values(grid, u.values)
    cov = apply_divergence(grid, signed_power(g, p))
    cov += grid.weights * signed_power(u.values, p)
    return cov


@functools.lru_cache(maxsize=32)
def h1_bands(grid):
    """Banded ``K + M``: unit stiffness plus lumped mass, free nodes only."""
    ab = stiffness_bands(grid, np.ones(grid.n - 1))
    ab[1] += grid.weights[:-1]
    ab.flags.writeable = False
    return ab


def h1_solve(grid, cov_free):
    return solveh_banded(h1_bands(grid), cov_free, check_finite=False)


def dual_norm(grid, cov):
    """H^1-dual norm ``sqrt(c^T (K + M)^-1 c)`` over free nodes."""
    c = cov[:-1]
    if not np.any(c):
        return 0.0
    return math.sqrt(max(float(np.dot(c, h1_solve(grid, c))), 0.0))


def _as_gradient(u, cov):
    cov = np.array(cov, dtype=float)
    cov[-1] = 0.0
    field = cov / u.grid.weights
    return Gradient(RadialField(u.grid, field), cov, dual_norm(u.grid, cov))


def _coupling_covector(u, e, phi):
    return u.grid.weights * phi * signed_power(u.values, e.s)


def J_grad(u, e, *, tol=POISSON_TOL, cache=DEFAULT_CACHE, far_field=True):
    """Exact derivative of the discrete reduced energy."""
    cov = _norm_covector(u, e.p)
    if e.lam != 0.0:
        phi = potential(u, e, tol=tol, cache=cache, far_field=far_field)
        cov += e.lam * _coupling_covector(u, e, phi)
    cov -= u.grid.weights * signed_power(u.values, e.r)
    return _as_gradient(u, cov)


# -- Pohozaev-type functional and scaling -------------------------------------

def _require_any_lambda(e):
    if theorem_regime(e) is not Regime.ANY_LAMBDA:
        raise RegimeError(
            f"r={e.r} does not exceed the threshold {e.r_threshold}")


def J_tilde(u, e, *, tol=POISSON_TOL, cache=DEFAULT_CACHE, far_field=True):
    """Derivative of the energy along the scaling path at ``tau = 0``."""
    _require_any_lambda(e)
    grad_p, mass_p, coupling, local_r, _ = _integrals(u, e, tol, cache,
                                                      far_field)
    a1, a2, a3 = e.alpha1 - 3.0, e.alpha2 - 3.0, e.alpha3 - 3.0
    return (a1 / e.p * grad_p + a2 / e.p * mass_p
            + e.lam * (e.q - 1.0) * a1 / (e.q * e.s) * coupling
            - a3 / e.r * local_r)


def scaled_energy_closed_form(u, t, e, *, tol=POISSON_TOL, cache=DEFAULT_CACHE,
                              far_field=True):
    """``J(u_t)`` for ``u_t(x) = t^k u(t x)``, ``k`` the scaling exponent.

    The four base integrals are computed once for ``u`` and multiplied by
    ``t^(alpha1-3)``, ``t^(alpha2-3)``, ``t^(alpha1-3)`` and
    ``t^(alpha3-3)``; the rescaled field is never formed.
    """
    _require_any_lambda(e)
    if u.profile is None:
        raise ProfileRequired("closed form needs an analytic profile")
    base = J(u, e, tol=tol, cache=cache, far_field=far_field)
    t1, t2, t3 = (t ** (e.alpha1 - 3.0), t ** (e.alpha2 - 3.0),
                  t ** (e.alpha3 - 3.0))
    return EnergyBreakdown.from_terms(t1 * base.kinetic, t2 * base.mass,
                                      t1 * base.nonlocal_, t3 * base.local)


def scaling_map(u, tau, e, **kwargs):
    """``K(tau, u) = e^(k tau) u(e^tau x)`` on the same grid."""
    from .grid import rescale_field
    return rescale_field(u, math.exp(tau), e.scaling_k, **kwargs)


# -- cut-off functional -------------------------------------------------------

def _g(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _g_prime(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


def bump_h(t):
    """Smooth step: 1 on ``t <= 1/2``, 0 on ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    a, b = _g(1.0 - t), _g(t - 0.5)
    out = a / (a + b)
    return out if out.ndim else float(out)


def bump_h_prime(t):
    t = np.asarray(t, dtype=float)
    a, b = _g(1.0 - t), _g(t - 0.5)
    da, db = -_g_prime(1.0 - t), _g_prime(t - 0.5)
    out = (da * b - a * db) / (a + b) ** 2
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CutoffConfig:
    M: float
    h: object = bump_h
    h_prime: object = bump_h_prime

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")


def _cutoff_state(u, e, c):
    grid = u.grid
    g = gradient_values(grid, u.values)
    absu = np.abs(u.values)
    grad_p = grid.integrate_cells(np.abs(g) ** e.p)
    mass_p = grid.integrate(absu ** e.p)
    local_r = grid.integrate(absu ** e.r)
    norm2 = (grad_p + mass_p) ** (2.0 / e.p)
    x = norm2 / c.M ** 2
    return grad_p, mass_p, local_r, norm2, float(c.h(x)), float(c.h_prime(x))


def J_M(u, e, c, *, tol=POISSON_TOL, cache=DEFAULT_CACHE, far_field=True):
    """Cut-off energy: nonlocal term weighted by ``h(||u||^2 / M^2)``."""
    grad_p, mass_p, local_r, _, z, _ = _cutoff_state(u, e, c)
    coupling = 0.0
    if z != 0.0 and e.lam != 0.0:
        phi = potential(u, e, tol=tol, cache=cache, far_field=far_field)
        coupling = u.grid.integrate(phi * np.abs(u.values) ** e.s)
    return _breakdown(e, grad_p, mass_p, coupling, local_r, zfactor=z)


def J_M_grad(u, e, c, *, tol=POISSON_TOL, cache=DEFAULT_CACHE,
             far_field=True):
    """Exact derivative of :func:`J_M`, including the ``h'`` chain term."""
    grid = u.grid
    _, _, _, norm2, z, dz = _cutoff_state(u, e, c)
    base = _norm_covector(u, e.p)
    cov = base.copy()
    if (z != 0.0 or dz != 0.0) and e.lam != 0.0:
        phi = potential(u, e, tol=tol, cache=cache, far_field=far_field)
        cov += e.lam * (z * _coupling_covector(u, e, phi))
        coupling = grid.integrate(phi * np.abs(u.values) ** e.s)
        nl = (e.q - 1.0) / (e.q * e.s) * coupling
        # d||u||^2 = 2 ||u||^(2-p) d(||u||^p / p)
        coef = e.lam * nl * dz * 2.0 * norm2 ** (1.0 - 0.5 * e.p) / c.M ** 2
        cov -= grid.weights * signed_power(u.values, e.r)
        cov += coef * base
    else:
        cov -= grid.weights * signed_power(u.values, e.r)
    return _as_gradient(u, cov)


def norm_u(u, e):
    from .grid import w1p_norm
    return w1p_norm(u, e.p)


# -- second derivatives -------------------------------------------------------

def _dense_from_bands(ab):
    H = np.diag(ab[1].copy())
    idx = np.arange(1, ab.shape[1])
    H[idx - 1, idx] = ab[0, 1:]
    H[idx, idx - 1] = ab[0, 1:]
    return H


def _power_weight(x, a, floor=1e-300):
    """``(a - 1) |x|^(a - 2)``, floored at zero arguments when ``a < 2``."""
    ax = np.abs(x)
    if a < 2.0:
        ax = np.maximum(ax, floor)
    return (a - 1.0) * ax ** (a - 2.0)


def _p_part_hessian(u, p):
    """Hessian of ``(1/p) ||u||^p`` on free nodes, as a dense matrix."""
    grid = u.grid
    g = gradient_values(grid, u.values)
    ab = stiffness_bands(grid, _power_weight(g, p))
    ab[1] += grid.weights[:-1] * _power_weight(u.values[:-1], p)
    return _dense_from_bands(ab)


def _nonlocal_hessian(u, e, tol, cache, far_field):
    """Hessian of ``((q-1)/(q s)) int phi_u |u|^s`` and its gradient."""
    grid = u.grid
    sol = phi_of(u, e, tol=tol, cache=cache)
    phi = potential(u, e, tol=tol, cache=cache, far_field=far_field)
    w = grid.weights[:-1]
    uf = u.values[:-1]
    wpsi = w * signed_power(uf, e.s)
    # linearized q-Laplacian at phi_u, same regularization as the solve
    gphi = gradient_values(grid, sol.phi.values)
    eps = sol.epsilon
    if e.q == 2.0:
        a = np.ones_like(gphi)
    else:
        y = np.maximum(gphi * gphi + eps * eps, 1e-300)
        a = y ** (0.5 * e.q - 2.0) * ((e.q - 1.0) * gphi * gphi + eps * eps)
    Y = solveh_banded(stiffness_bands(grid, a), np.diag(wpsi),
                      check_finite=False)
    H = e.s * wpsi[:, None] * Y
    H[np.diag_indices_from(H)] += w * phi[:-1] * _power_weight(uf, e.s)
    if far_field:
        mass = grid.integrate(np.abs(u.values) ** e.s)
        if mass > 0:
            c = far_field_offset(grid.R, mass, e.q)
            H += (e.s * c / ((e.q - 1.0) * mass)) * np.outer(wpsi, wpsi)
    cov = w * phi[:-1] * signed_power(uf, e.s)
    value = (e.q - 1.0) / (e.q * e.s) * grid.integrate(
        phi * np.abs(u.values) ** e.s)
    return 0.5 * (H + H.T), cov, value


def J_hessian(u, e, *, cutoff=None, tol=POISSON_TOL, cache=DEFAULT_CACHE,
              far_field=True):
    """Dense Hessian of :func:`J` (or of :func:`J_M` when ``cutoff`` is set).

    Rows and columns run over the free nodes ``0..n-2``. The nonlocal block
    is ``s (w psi) A'^-1 (w psi)^T`` plus its diagonal part, with ``A'`` the
    linearized q-Laplacian at ``phi_u``; it is dense.
    """
    grid = u.grid
    Hp = _p_part_hessian(u, e.p)
    H = Hp.copy()
    w = grid.weights[:-1]
    H[np.diag_indices_from(H)] -= w * _power_weight(u.values[:-1], e.r)
    if e.lam == 0.0:
        return H
    if cutoff is None:
        HN, _, _ = _nonlocal_hessian(u, e, tol, cache, far_field)
        return H + e.lam * HN
    _, _, _, norm2, z, dz = _cutoff_state(u, e, cutoff)
    if z == 0.0 and dz == 0.0:
        return H
    HN, gN, nl = _nonlocal_hessian(u, e, tol, cache, far_field)
    base = _norm_covector(u, e.p)[:-1]
    x = norm2 / cutoff.M ** 2
    dx = 1e-6 * max(x, 1e-3)
    d2z = (cutoff.h_prime(x + dx) - cutoff.h_prime(x - dx)) / (2.0 * dx)
    a = 2.0 * norm2 ** (1.0 - 0.5 * e.p)
    grad_n2 = a * base
    hess_n2 = a * Hp + (2.0 - e.p) * 2.0 * norm2 ** (1.0 - e.p) * np.outer(
        base, base)
    M2 = cutoff.M ** 2
    grad_z = dz * grad_n2 / M2
    hess_z = d2z * np.outer(grad_n2, grad_n2) / M2 ** 2 + dz * hess_n2 / M2
    H += e.lam * (z * HN + np.outer(grad_z, gN) + np.outer(gN, grad_z)
                  + nl * hess_z)
    return H


def h1_gram(grid):
    """Dense ``K + M`` on free nodes."""
    return _dense_from_bands(h1_bands(grid))
