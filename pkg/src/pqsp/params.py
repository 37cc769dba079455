"""Admissible exponent regime and derived exponents.

The system couples a p-Laplacian Schrodinger equation to a q-Laplacian
Poisson equation in R^3. Every other module takes an :class:`ExponentSet`
produced by :func:`validate_params`, so the open parameter ranges are
checked exactly once.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

DEFAULT_MARGIN = 1e-12


class RangeError(ValueError):
    """A parameter lies outside its admissible (open) interval."""

    def __init__(self, name, value, lower, upper, message):
        self.name = name
        self.value = value
        self.lower = lower
        self.upper = upper
        super().__init__(message)


class Regime(enum.Enum):
    """Which existence result covers a parameter set.

    ``ANY_LAMBDA``: r lies above the threshold, solutions exist for every
    coupling and the scaling path gives the mountain-pass geometry.
    ``SMALL_LAMBDA``: only small couplings are covered and the cut-off
    functional must be used.
    """

    ANY_LAMBDA = "AnyLambda"
    SMALL_LAMBDA = "SmallLambda"


@dataclass(frozen=True)
class ExponentSet:
    p: float
    q: float
    s: float
    r: float
    lam: float
    margin: float = DEFAULT_MARGIN
    p_star: float = field(init=False)
    q_star: float = field(init=False)
    r_threshold: float = field(init=False)
    alpha1: float = field(init=False)
    alpha2: float = field(init=False)
    alpha3: float = field(init=False)
    scaling_k: float = field(init=False)

    def __post_init__(self):
        p, q, s, r = self.p, self.q, self.s, self.r
        num = p * (q - 1.0) + q
        den = p * (1.0 - q) + q * s
        derived = {
            "p_star": 3.0 * p / (3.0 - p),
            "q_star": 3.0 * q / (3.0 - q),
            "r_threshold": p * q * (1.0 + s) / num,
            "alpha1": p * q * (s + 1.0) / den,
            "alpha2": p * num / den,
            "alpha3": r * num / den,
            "scaling_k": num / den,
        }
        for key, value in derived.items():
            object.__setattr__(self, key, value)

    @property
    def lambda_(self):
        return self.lam

    @property
    def ray_exponent(self):
        """Homogeneity degree of the nonlocal term along rays, qs/(q-1)."""
        return self.q * self.s / (self.q - 1.0)

    def with_lambda(self, lam, **kwargs):
        return validate_params(self.p, self.q, self.s, self.r, lam,
                               margin=self.margin, **kwargs)

    def to_dict(self):
        return {
            "p": self.p, "q": self.q, "s": self.s, "r": self.r,
            "lambda": self.lam,
            "p_star": self.p_star, "q_star": self.q_star,
            "r_threshold": self.r_threshold,
            "alpha1": self.alpha1, "alpha2": self.alpha2,
            "alpha3": self.alpha3, "scaling_k": self.scaling_k,
        }


def admissible_intervals(p, q):
    """Open intervals for (q, r, s) given p (and q for s).

    Returns a dict mapping parameter name to ``(lower, upper)``.
    """
    out = {"p": (1.0, 3.0)}
    out["q"] = (max(1.0, 3.0 * p / (5.0 * p - 3.0)), 3.0)
    p_star = 3.0 * p / (3.0 - p)
    out["r"] = (p, p_star)
    if 1.0 < q < 3.0:
        q_star = 3.0 * q / (3.0 - q)
        out["s"] = (max(1.0, (q_star - 1.0) * p / q_star),
                    (q_star - 1.0) * p_star / q_star)
    return out


def _check(name, value, lower, upper, margin, text):
    if not (lower + margin < value < upper - margin):
        raise RangeError(
            name, value, lower, upper,
            f"{name}={value!r} violates {text}; admissible interval given "
            f"the other parameters is ({lower!r}, {upper!r})")


def validate_params(p, q, s, r, lam, *, margin=DEFAULT_MARGIN,
                    allow_zero_lambda=False):
    """Check the admissible regime and return the populated exponent set.

    Parameters
    ----------
    p, q, s, r : float
        Exponents of the system.
    lam : float
        Coupling strength, required to be positive.
    margin : float
        Strict inequalities must hold with this much room, so values on a
        boundary are rejected deterministically.
    allow_zero_lambda : bool
        Test-only escape hatch that admits ``lam == 0`` (decoupled
        functional).

    Raises
    ------
    RangeError
        Naming the first violated inequality and the admissible interval.
    """
    values = {"p": p, "q": q, "s": s, "r": r, "lambda": lam}
    for name, value in values.items():
        if not math.isfinite(value):
            raise RangeError(name, value, None, None,
                             f"{name}={value!r} is not finite")
    p, q, s, r, lam = map(float, (p, q, s, r, lam))
    _check("p", p, 1.0, 3.0, margin, "1 < p < 3")
    lo, hi = admissible_intervals(p, q)["q"]
    _check("q", q, lo, hi, margin, "max{1, 3p/(5p-3)} < q < 3")
    lo, hi = admissible_intervals(p, q)["r"]
    _check("r", r, lo, hi, margin, "p < r < p* = 3p/(3-p)")
    lo, hi = admissible_intervals(p, q)["s"]
    _check("s", s, lo, hi, margin,
           "max{1, (q*-1)p/q*} < s < (q*-1)p*/q*")
    if allow_zero_lambda:
        if lam < 0.0:
            raise RangeError("lambda", lam, 0.0, math.inf,
                             f"lambda={lam!r} violates lambda >= 0")
    elif not lam > 0.0:
        raise RangeError("lambda", lam, 0.0, math.inf,
                         f"lambda={lam!r} violates lambda > 0; "
                         "admissible interval is (0, inf)")
    return ExponentSet(p, q, s, r, lam, margin=margin)


def theorem_regime(e):
    """Classify ``e``: strictly above the r-threshold is ``ANY_LAMBDA``."""
    if e.r > e.r_threshold + e.margin:
        return Regime.ANY_LAMBDA
    return Regime.SMALL_LAMBDA
