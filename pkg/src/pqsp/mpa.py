"""Mountain-pass search for nontrivial critical points of the reduced energy.

The search runs in two phases.

Phase A deforms a discrete path ``0 = gamma_0, ..., gamma_m``, with
``J(gamma_m) < 0``. Each outer iteration takes the node of highest energy
and moves it along the Sobolev gradient with Armijo acceptance. The
neighbouring nodes then relax downhill orthogonally to the path, and every
few iterations the nodes are respaced to equal energy-arc length. The
sampled path maximum never increases.

Phase B starts once the normalized dual norm of the gradient at the
maximizer drops below ``switch_tol``. It is a Newton iteration on the
discrete Euler-Lagrange system, globalized by backtracking on the dual norm
of the gradient. Phase A converges only linearly, and slowly for degenerate
``p``. Newton reaches the certificate thresholds in a handful of steps and
cannot drift away from the saddle that Phase A isolated.

In the small-lambda regime the cut-off energy ``J_M`` is used throughout.
A result is only accepted as a critical point of ``J`` when it sits inside
the plateau window ``||u|| < M/2``. There ``J_M`` and ``J`` agree exactly,
and the gradient of ``J`` is re-checked.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import (CutoffConfig, J, J_M, J_M_grad, J_grad, J_hessian,
                     J_tilde, POISSON_TOL, dual_norm, h1_gram, h1_solve,
                     norm_u, phi_of)
from .grid import RadialField, from_profile, zeros
from .params import ExponentSet, Regime, theorem_regime
from .qpoisson import NoConvergence, PoissonProblem, solve_q_poisson

log = logging.getLogger(__name__)

TIE_TOL = 1e-12


class PathNotAdmissible(RuntimeError):
    pass


class WindowViolation(RuntimeError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


@dataclass
class MpaPath:
    nodes: list
    energies: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        if len(self.nodes) != len(self.energies):
            raise ValueError("one energy per node required")

    @property
    def admissible(self):
        return (not np.any(self.nodes[0].values)) and self.energies[-1] < 0

    def max_index(self):
        return _argmax_lowest(self.energies)

    @property
    def max_energy(self):
        return float(np.max(self.energies))


@dataclass(frozen=True)
class MpaConfig:
    path_nodes: int = 41
    max_outer_iters: int = 400
    step0: float = 1.0
    armijo_c1: float = 1e-4
    relax_neighbors: int = 2
    reparam_every: int = 1
    criticality_tol: float = 1e-6
    residual_tol: float = 1e-4
    switch_tol: float = 5e-3
    stall_iters: int = 60
    newton_iters: int = 40
    regime: Regime | None = None
    cutoff: CutoffConfig | None = None
    M_factor: float = 8.0
    max_doublings: int = 40
    poisson_tol: float = POISSON_TOL

    def __post_init__(self):
        if self.path_nodes < 11:
            raise ValueError("path_nodes must be at least 11")
        for name in ("criticality_tol", "residual_tol", "switch_tol",
                     "step0", "armijo_c1", "M_factor", "poisson_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_iters < 0 or self.newton_iters < 0:
            raise ValueError("iteration budgets must be nonnegative")

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["regime"] = None if self.regime is None else self.regime.value
        out["cutoff"] = None if self.cutoff is None else {"M": self.cutoff.M}
        return out


@dataclass
class CriticalPoint:
    u: RadialField
    level: float
    grad_dual_norm: float
    criticality: float
    pde_residual: float
    poisson_residual: float
    j_tilde: float | None
    norm_u: float
    regime: Regime
    cutoff_active: bool = False
    within_window: bool | None = None
    uncut_criticality: float | None = None
    morse_index: int | None = None
    initial_max: float | None = None
    iterations: int = 0
    newton_steps: int = 0
    trace: list = field(default_factory=list)

    @property
    def accepted(self):
        return (self.criticality <= self._tol and self.norm_u > 0
                and self.level > 0)

    _tol: float = 1e-6

    def summary(self):
        return {
            "level": self.level,
            "grad_dual_norm": self.grad_dual_norm,
            "criticality": self.criticality,
            "pde_residual": self.pde_residual,
            "poisson_residual": self.poisson_residual,
            "j_tilde": self.j_tilde,
            "j_tilde_ratio": (None if self.j_tilde is None
                              else abs(self.j_tilde) / abs(self.level)),
            "norm_u": self.norm_u,
            "regime": self.regime.value,
            "cutoff_active": self.cutoff_active,
            "within_window": self.within_window,
            "uncut_criticality": self.uncut_criticality,
            "morse_index": self.morse_index,
            "initial_max": self.initial_max,
            "iterations": self.iterations,
            "newton_steps": self.newton_steps,
        }


# -- small helpers ------------------------------------------------------------

def _argmax_lowest(values):
    values = np.asarray(values)
    top = np.max(values)
    return int(np.flatnonzero(values >= top - TIE_TOL)[0])


class _Functional:
    """Energy, gradient and Hessian of J or J_M behind one interface."""

    def __init__(self, e, cutoff, tol):
        self.e, self.cutoff, self.tol = e, cutoff, tol

    def energy(self, u):
        if self.cutoff is None:
            return J(u, self.e, tol=self.tol).total
        return J_M(u, self.e, self.cutoff, tol=self.tol).total

    def trial_energy(self, grid, values):
        """Energy of a trial field, ``inf`` when it is not representable."""
        if not np.all(np.isfinite(values)):
            return None, math.inf
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                u = RadialField(grid, values)
                E = self.energy(u)
            except (ValueError, NoConvergence):
                return None, math.inf
        return u, (E if math.isfinite(E) else math.inf)

    def grad(self, u):
        if self.cutoff is None:
            return J_grad(u, self.e, tol=self.tol)
        return J_M_grad(u, self.e, self.cutoff, tol=self.tol)

    def hessian(self, u):
        return J_hessian(u, self.e, cutoff=self.cutoff, tol=self.tol)


def _criticality(dual, nrm, p):
    """Dual norm of the gradient scaled by ``||u||^(p-1)``."""
    if nrm == 0.0:
        return math.inf if dual > 0 else 0.0
    return dual / nrm ** (p - 1.0)


def _sobolev_direction(grid, cov):
    """Riesz representative of a covector in the ``K + M`` inner product."""
    d = np.zeros(grid.n)
    d[:-1] = h1_solve(grid, cov[:-1])
    return d


def _h1_norm(grid, v):
    from .grid import gradient_values
    g = gradient_values(grid, v)
    return math.sqrt(grid.integrate_cells(g * g) + grid.integrate(v * v))


# -- initial path -------------------------------------------------------------

def _ray_first_max(e, u, budget):
    """Norm of the first local maximizer of ``t -> J(t u)``, or None."""
    ts = np.geomspace(1e-3, 2.0 ** min(budget, 20), 400)
    vals = np.array([J(u * t, e).total for t in ts])
    for i in range(1, len(ts) - 1):
        if vals[i] > vals[i - 1] and vals[i] >= vals[i + 1]:
            return norm_u(u * ts[i], e)
    return None


def default_cutoff(e, grid, seed_profile, cfg=None):
    """``M`` as ``M_factor`` times the norm of the first ray maximizer."""
    cfg = cfg or MpaConfig()
    u = from_profile(grid, seed_profile)
    nrm = _ray_first_max(e, u, cfg.max_doublings)
    if nrm is None:
        raise PathNotAdmissible(
            "the uncut ray energy has no local maximum; pass M explicitly")
    return CutoffConfig(M=cfg.M_factor * nrm)


def initial_path(e: ExponentSet, grid, seed_profile, *, cfg=None,
                 regime=None, cutoff=None, t_min=1.0):
    """Admissible starting path from 0 to a node of negative energy.

    ``AnyLambda``: the straight segment from 0 to ``u_{t_min}`` followed by
    the scaling curve ``t -> t^k u(t x)``, with the far end doubled until the
    energy is negative. ``SmallLambda``: the ray ``t -> t u`` up to the
    first doubling of ``t`` with ``J_M(t u) < 0``; here the seed may also be
    a :class:`RadialField`, e.g. a solution at a nearby ``lambda``.
    """
    cfg = cfg or MpaConfig()
    regime = regime or cfg.regime or theorem_regime(e)
    if regime is Regime.SMALL_LAMBDA and cutoff is None:
        cutoff = cfg.cutoff
        if cutoff is None:
            raise ValueError("SmallLambda paths need a CutoffConfig")
    m = cfg.path_nodes - 1
    if regime is Regime.ANY_LAMBDA:
        if seed_profile is None or not hasattr(seed_profile, "rescaled"):
            raise ValueError("seed_profile must be an analytic profile")
        k = e.scaling_k

        def curve(t):
            return from_profile(grid, seed_profile.rescaled(t, k))

        start = curve(t_min)
        if not np.any(start.values):
            raise ValueError("seed profile vanishes on the grid")
        t_far = t_min
        for _ in range(cfg.max_doublings):
            t_far *= 2.0
            if J(curve(t_far), e).total < 0:
                break
        else:
            raise PathNotAdmissible(
                f"no negative energy along the scaling curve up to t={t_far}")
        n_seg = max(m // 4, 2)
        fields = [start * (j / n_seg) for j in range(n_seg + 1)]
        ts = np.geomspace(t_min, t_far, m - n_seg + 1)[1:]
        fields += [curve(t) for t in ts]
        fn = _Functional(e, None, cfg.poisson_tol)
        info = {"kind": "scaling", "t_min": t_min, "t_far": t_far}
    else:
        seed = (seed_profile if isinstance(seed_profile, RadialField)
                else from_profile(grid, seed_profile))
        if not seed.grid.same_as(grid):
            raise ValueError("seed field lives on a different grid")
        if not np.any(seed.values):
            raise ValueError("seed profile vanishes on the grid")
        fn = _Functional(e, cutoff, cfg.poisson_tol)
        t_far = 1.0
        for _ in range(cfg.max_doublings):
            t_far *= 2.0
            if fn.energy(seed * t_far) < 0:
                break
        else:
            raise PathNotAdmissible(
                f"no negative cut-off energy along the ray up to t={t_far}")
        fields = [seed * (t_far * j / m) for j in range(m + 1)]
        info = {"kind": "ray", "t_far": t_far, "M": cutoff.M}
    fields[0] = zeros(grid)
    energies = [fn.energy(f) for f in fields]
    path = MpaPath(fields, energies, info)
    if not path.admissible:
        raise PathNotAdmissible("final node energy is not negative")
    return path


# -- phase A: path deformation ------------------------------------------------

def _armijo_step(fn, u, E, cov, direction, alpha, c1, max_halvings=30,
                 max_move=None):
    """Backtracking along ``-direction``; returns (u, E, alpha) or None.

    ``max_move`` caps the H^1 length of the step.
    """
    slope = float(np.dot(cov, direction))
    if slope <= 0.0:
        return None
    if max_move is not None:
        dn = _h1_norm(u.grid, direction)
        if dn > 0:
            alpha = min(alpha, max_move / dn)
    for _ in range(max_halvings):
        trial, Et = fn.trial_energy(u.grid, u.values - alpha * direction)
        if Et <= E - c1 * alpha * slope:
            return trial, Et, alpha
        alpha *= 0.5
    return None


def _tangent(path, i):
    a = path.nodes[max(i - 1, 0)].values
    b = path.nodes[min(i + 1, len(path.nodes) - 1)].values
    t = b - a
    nrm = _h1_norm(path.nodes[0].grid, t)
    return t / nrm if nrm > 0 else t


def _h1_inner(grid, a, b):
    from .grid import gradient_values
    return (grid.integrate_cells(gradient_values(grid, a)
                                 * gradient_values(grid, b))
            + grid.integrate(a * b))


def _relax_node(fn, path, i, cfg, alpha):
    """One downhill step of node ``i`` orthogonal to the path tangent."""
    u = path.nodes[i]
    grid = u.grid
    gr = fn.grad(u)
    d = _sobolev_direction(grid, gr.covector)
    tau = _tangent(path, i)
    d = d - _h1_inner(grid, d, tau) * tau
    d[-1] = 0.0
    grid_nodes = path.nodes
    gap = min(_h1_norm(grid, u.values - grid_nodes[i - 1].values),
              _h1_norm(grid, grid_nodes[i + 1].values - u.values))
    res = _armijo_step(fn, u, path.energies[i], gr.covector, d, alpha,
                       cfg.armijo_c1, max_halvings=12, max_move=0.5 * gap)
    if res is not None:
        path.nodes[i], path.energies[i], _ = res


def _arc_lengths(path):
    grid = path.nodes[0].grid
    du = np.array([_h1_norm(grid, b.values - a.values)
                   for a, b in zip(path.nodes[:-1], path.nodes[1:])])
    dE = np.abs(np.diff(path.energies))
    su, sE = du.sum(), dE.sum()
    seg = np.sqrt((du / su) ** 2 + ((dE / sE) ** 2 if sE > 0 else 0.0))
    return np.concatenate([[0.0], np.cumsum(seg)])


def truncate(path):
    """Drop nodes past the first negative-energy node after the maximizer."""
    i = path.max_index()
    neg = np.flatnonzero(path.energies[i:] < 0)
    if not len(neg):
        return path
    end = i + int(neg[0])
    if end >= len(path.nodes) - 1:
        return path
    return MpaPath(path.nodes[:end + 1], path.energies[:end + 1],
                   path.params)


def reparametrize(path, fn, guard=False, nodes=None):
    """Respace nodes to equal energy-arc length, keeping the maximizer.

    With ``guard`` the old path is returned whenever respacing would raise
    the sampled maximum.
    """
    s = _arc_lengths(path)
    if not np.all(np.diff(s) > 0):
        return path
    m = len(path.nodes) - 1
    imax = path.max_index()
    mt = m if nodes is None else nodes - 1
    target = np.linspace(0.0, s[-1], mt + 1)
    # pin the maximizer to its nearest target slot
    j = int(np.argmin(np.abs(target - s[imax])))
    if 0 < j < mt:
        target[j] = s[imax]
    else:
        return path
    if not np.all(np.diff(target) > 0):
        return path
    stack = np.array([n.values for n in path.nodes])
    new_nodes, new_E = [], []
    for tk in target:
        idx = int(np.clip(np.searchsorted(s, tk, side="right") - 1, 0, m - 1))
        lam = (tk - s[idx]) / (s[idx + 1] - s[idx])
        if lam <= 1e-12:
            new_nodes.append(path.nodes[idx])
            new_E.append(path.energies[idx])
            continue
        if lam >= 1.0 - 1e-12:
            new_nodes.append(path.nodes[idx + 1])
            new_E.append(path.energies[idx + 1])
            continue
        v = path.nodes[0].with_values((1 - lam) * stack[idx]
                                      + lam * stack[idx + 1])
        new_nodes.append(v)
        new_E.append(fn.energy(v))
    new_nodes[0] = path.nodes[0]
    new_E[0] = path.energies[0]
    if guard and max(new_E) > path.max_energy:
        return path
    return MpaPath(new_nodes, new_E, path.params)


def _local_gap(path, i):
    grid = path.nodes[0].grid
    u = path.nodes[i].values
    gaps = [_h1_norm(grid, path.nodes[j].values - u)
            for j in (i - 1, i + 1) if 0 <= j < len(path.nodes)]
    return min(gaps + [0.25 * _h1_norm(grid, u)])


def deform_path(path, fn, e, cfg, trace):
    """Phase A. Returns the final path and the number of outer iterations."""
    alpha = cfg.step0
    alphas = {}
    it = 0
    best, best_it = math.inf, 0
    for it in range(1, cfg.max_outer_iters + 1):
        i = path.max_index()
        u = path.nodes[i]
        gr = fn.grad(u)
        nrm = norm_u(u, e)
        crit = _criticality(gr.dual_norm, nrm, e.p)
        trace.append({"iter": it, "phase": "A", "max_energy": path.max_energy,
                      "grad_norm": gr.dual_norm, "criticality": crit,
                      "norm_u": nrm, "max_index": i})
        if crit <= cfg.switch_tol or i in (0, len(path.nodes) - 1):
            break
        if crit < 0.9 * best:
            best, best_it = crit, it
        elif it - best_it > cfg.stall_iters:
            log.info("path deformation stalled at criticality %.3e", crit)
            break
        d = _sobolev_direction(u.grid, gr.covector)
        a0 = alphas.get(i, alpha)
        res = _armijo_step(fn, u, path.energies[i], gr.covector, d,
                           2.0 * a0, cfg.armijo_c1,
                           max_move=_local_gap(path, i))
        if res is None:
            break
        path.nodes[i], path.energies[i], alphas[i] = res
        alpha = alphas[i]
        for off in range(1, cfg.relax_neighbors + 1):
            for j in (i - off, i + off):
                if 0 < j < len(path.nodes) - 1:
                    _relax_node(fn, path, j, cfg, alpha)
        # sampled maximum after the deformation step, before respacing
        trace[-1]["max_after_step"] = path.max_energy
        if cfg.reparam_every and it % cfg.reparam_every == 0:
            path = reparametrize(truncate(path), fn, nodes=cfg.path_nodes)
            alphas.clear()
    return path, it


# -- phase B: Newton polish ---------------------------------------------------

def newton_polish(u, fn, e, cfg, trace, it0=0):
    """Newton on ``J'(u) = 0`` with backtracking on the gradient dual norm."""
    grid = u.grid
    gr = fn.grad(u)
    steps = 0
    for steps in range(1, cfg.newton_iters + 1):
        nrm = norm_u(u, e)
        crit = _criticality(gr.dual_norm, nrm, e.p)
        trace.append({"iter": it0 + steps, "phase": "B",
                      "max_energy": fn.energy(u), "grad_norm": gr.dual_norm,
                      "criticality": crit, "norm_u": nrm, "max_index": -1})
        if crit <= 1e-3 * cfg.criticality_tol:
            break
        H = fn.hessian(u)
        try:
            delta = np.linalg.solve(H, -gr.covector[:-1])
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(H, -gr.covector[:-1], rcond=None)[0]
        step = np.zeros(grid.n)
        step[:-1] = delta
        t = 1.0
        accepted = False
        for _ in range(30):
            trial = u.with_values(u.values + t * step)
            gt = fn.grad(trial)
            if gt.dual_norm < (1.0 - 1e-4 * t) * gr.dual_norm:
                u, gr, accepted = trial, gt, True
                break
            t *= 0.5
        if not accepted:
            break
    return u, gr, steps


def morse_index(u, fn):
    """Number of negative eigenvalues of the Hessian in the ``K + M`` metric."""
    from scipy.linalg import eigh
    H = fn.hessian(u)
    vals = eigh(H, h1_gram(u.grid), eigvals_only=True)
    scale = max(np.max(np.abs(vals)), 1e-300)
    return int(np.sum(vals < -1e-10 * scale))


# -- driver -------------------------------------------------------------------

def run_mpa(e: ExponentSet, grid, cfg: MpaConfig | None = None, *,
            seed_profile=None, path=None, start=None) -> CriticalPoint:
    """Two-phase mountain-pass search; see the module docstring.

    ``path`` replaces the default initial path. ``start`` skips the path
    phase and polishes the given field directly (used to resume a run).
    """
    from .grid import Gaussian
    cfg = cfg or MpaConfig()
    regime = cfg.regime or theorem_regime(e)
    if regime is Regime.ANY_LAMBDA and theorem_regime(e) is not Regime.ANY_LAMBDA:
        raise ValueError("AnyLambda search requested below the threshold")
    seed_profile = seed_profile or Gaussian(1.0, 1.0)
    cutoff = None
    if regime is Regime.SMALL_LAMBDA:
        cutoff = cfg.cutoff or default_cutoff(e, grid, seed_profile, cfg)
        cfg = replace(cfg, cutoff=cutoff)
    fn = _Functional(e, cutoff, cfg.poisson_tol)
    trace = []
    if start is not None:
        if not start.grid.same_as(grid):
            raise ValueError("start field lives on a different grid")
        u0, iters, initial_max = start, 0, fn.energy(start)
    else:
        if path is None:
            path = initial_path(e, grid, seed_profile, cfg=cfg,
                                regime=regime, cutoff=cutoff)
        initial_max = path.max_energy
        path, iters = deform_path(path, fn, e, cfg, trace)
        u0 = path.nodes[path.max_index()]
    u, gr, nsteps = newton_polish(u0, fn, e, cfg, trace, it0=len(trace))
    point = _certify(u, e, cfg, fn, regime, cutoff, initial_max,
                     iters, nsteps, trace)
    # the window test comes first: a candidate outside it is rejected as a
    # critical point of J whether or not the polish converged
    if regime is Regime.SMALL_LAMBDA and not point.within_window:
        raise WindowViolation(
            f"mountain-pass candidate of J_M has ||u|| = {point.norm_u:.4g} "
            f">= M/2 = {cutoff.M / 2:.4g} (criticality "
            f"{point.criticality:.3e})", point=point)
    bad = []
    if not point.criticality <= cfg.criticality_tol:
        bad.append(f"criticality {point.criticality:.3e}")
    if not point.norm_u > 1e-8:
        bad.append("trivial limit u = 0")
    if not point.level > 0:
        bad.append(f"level {point.level:.3e} is not positive")
    if bad:
        raise NoConvergence("mountain-pass search failed: " + ", ".join(bad),
                            iterations=iters + nsteps,
                            residual=point.criticality, best=point)
    return point


def _certify(u, e, cfg, fn, regime, cutoff, initial_max, iters, nsteps,
             trace):
    cert = verify_critical_point(u, e, cutoff=cutoff, tol=cfg.poisson_tol)
    within = None
    uncut = None
    if cutoff is not None:
        within = cert["norm_u"] < 0.5 * cutoff.M
        if within:
            g = J_grad(u, e, tol=cfg.poisson_tol)
            uncut = _criticality(g.dual_norm, cert["norm_u"], e.p)
    try:
        mi = morse_index(u, fn)
    except Exception:  # certificate extra, never fatal
        mi = None
    point = CriticalPoint(
        u=u, level=cert["energy"], grad_dual_norm=cert["grad_dual_norm"],
        criticality=cert["criticality"], pde_residual=cert["pde_residual"],
        poisson_residual=cert["poisson_residual"], j_tilde=cert["j_tilde"],
        norm_u=cert["norm_u"], regime=regime,
        cutoff_active=cutoff is not None, within_window=within,
        uncut_criticality=uncut, morse_index=mi, initial_max=initial_max,
        iterations=iters, newton_steps=nsteps, trace=trace)
    point._tol = cfg.criticality_tol
    return point


# -- verification -------------------------------------------------------------

def verify_critical_point(u: RadialField, e: ExponentSet, *, cutoff=None,
                          tol=POISSON_TOL):
    """Certificate computed from a fresh Poisson solve.

    Reports the dual norm of the gradient and its ``||u||^(p-1)``-scaled
    version, the strong-form residual of the Schrodinger equation in the
    weighted L^2 norm (relative to ``|| |u|^(r-1) ||``), the residual of the
    Poisson equation, ``J~(u)`` when ``r`` is above the threshold, and
    ``J(u)``.
    """
    if not np.all(np.isfinite(u.values)):
        raise ValueError("u must be finite")
    grid = u.grid
    w = grid.weights[:-1]
    if not np.any(u.values):
        return {"trivial": True, "grad_dual_norm": 0.0, "criticality": 0.0,
                "pde_residual": 0.0, "poisson_residual": 0.0,
                "j_tilde": 0.0 if theorem_regime(e) is Regime.ANY_LAMBDA
                else None,
                "energy": 0.0, "norm_u": 0.0}
    if cutoff is None:
        gr = J_grad(u, e, tol=tol, cache=None)
        energy = J(u, e, tol=tol, cache=None).total
    else:
        gr = J_M_grad(u, e, cutoff, tol=tol, cache=None)
        energy = J_M(u, e, cutoff, tol=tol, cache=None).total
    nrm = norm_u(u, e)
    strong = gr.covector[:-1] / w
    ref = np.abs(u.values[:-1]) ** (e.r - 1.0)
    denom = math.sqrt(float(np.sum(w * ref * ref)))
    pde = math.sqrt(float(np.sum(w * strong * strong))) / denom
    if e.lam != 0.0:
        sol = solve_q_poisson(PoissonProblem(u, e.q, e.s, tol=tol))
        pres = sol.residual_norm
    else:
        pres = 0.0
    jt = None
    if theorem_regime(e) is Regime.ANY_LAMBDA:
        jt = J_tilde(u, e, tol=tol, cache=None)
    return {"trivial": False, "grad_dual_norm": gr.dual_norm,
            "criticality": _criticality(gr.dual_norm, nrm, e.p),
            "pde_residual": pde, "poisson_residual": pres, "j_tilde": jt,
            "energy": energy, "norm_u": nrm}


# -- lambda bisection ---------------------------------------------------------

@dataclass
class BisectionResult:
    lam_ok: float
    lam_fail: float
    point_ok: CriticalPoint
    fail_reason: str
    point_fail: CriticalPoint | None
    rows: list
    M: float

    @property
    def ratio(self):
        return self.lam_fail / self.lam_ok


def _classify(e, grid, cfg, seed):
    """Run one search; returns (ok, point, reason)."""
    try:
        return True, run_mpa(e, grid, cfg, seed_profile=seed), "ok"
    except WindowViolation as exc:
        return False, exc.point, "WindowViolation"
    except NoConvergence as exc:
        return False, exc.best, "NoConvergence"
    except PathNotAdmissible:
        return False, None, "PathNotAdmissible"


def _row(lam, ok, point, reason):
    row = {"lambda": lam, "within_window": ok, "outcome": reason}
    if point is not None:
        s = point.summary()
        for k in ("level", "norm_u", "criticality", "pde_residual",
                  "uncut_criticality", "morse_index"):
            row[k] = s[k]
    return row


def lambda_bisection(e, grid, cfg=None, *, lam_ok, lam_fail, ratio=1.1,
                     seed_profile=None, max_runs=60, grow=4.0):
    """Bracket the largest ``lambda`` with a critical point inside the window.

    ``M`` is fixed once, from the run at ``lam_ok``, and kept for every
    ``lambda``. Each trial ray goes through the last accepted solution, so
    the bracket follows the branch found at ``lam_ok``. Bisection is
    geometric and stops once ``lam_fail / lam_ok <= ratio``.
    """
    from .grid import Gaussian
    cfg = cfg or MpaConfig()
    seed_profile = seed_profile or Gaussian(1.0, 1.0)
    if not 0 < lam_ok < lam_fail:
        raise ValueError("need 0 < lam_ok < lam_fail")
    e_ok = e.with_lambda(lam_ok)
    if theorem_regime(e_ok) is not Regime.SMALL_LAMBDA:
        raise ValueError("bisection applies below the threshold exponent")
    cutoff = cfg.cutoff or default_cutoff(e_ok, grid, seed_profile, cfg)
    cfg = replace(cfg, cutoff=cutoff, regime=Regime.SMALL_LAMBDA)
    rows = []
    ok, point, reason = _classify(e_ok, grid, cfg, seed_profile)
    rows.append(_row(lam_ok, ok, point, reason))
    if not ok:
        raise WindowViolation(f"no window solution at lam_ok={lam_ok} "
                              f"({reason})", point=point)
    best = point
    lo, hi = lam_ok, lam_fail
    fail_point, fail_reason = None, None
    runs = 1
    while True:
        ok, point, reason = _classify(e.with_lambda(hi), grid, cfg, best.u)
        rows.append(_row(hi, ok, point, reason))
        runs += 1
        if not ok:
            fail_point, fail_reason = point, reason
            break
        lo, best = hi, point
        hi *= grow
        if runs >= max_runs:
            raise NoConvergence("no failing lambda found", iterations=runs)
    while hi / lo > ratio and runs < max_runs:
        mid = math.sqrt(lo * hi)
        ok, point, reason = _classify(e.with_lambda(mid), grid, cfg, best.u)
        rows.append(_row(mid, ok, point, reason))
        runs += 1
        if ok:
            lo, best = mid, point
        else:
            hi, fail_point, fail_reason = mid, point, reason
    return BisectionResult(lo, hi, best, fail_reason, fail_point, rows,
                           cutoff.M)
