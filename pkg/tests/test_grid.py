import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from pqsp import io as pio
from pqsp.grid import (Bump, ConfigError, ExtrapolationWarning, Gaussian,
                       GridMismatch, RadialField, d1q_norm, from_function,
                       from_profile, gradient_values, lp_integral, make_grid,
                       radial_gradient, rescale_field, strip_profile,
                       w1p_norm, zeros)
from pqsp.qpoisson import q_laplacian_covector

FOUR_PI = 4 * math.pi


def radial_quad(f, R=np.inf):
    """Independent reference: 4 pi int_0^R f(r) r^2 dr by adaptive quadrature."""
    val, _ = quad(lambda r: f(r) * r * r, 0.0, R, epsabs=0.0, epsrel=1e-13,
                  limit=400)
    return FOUR_PI * val


# -- construction and quadrature ----------------------------------------------

def test_uniform_grid_volume():
    g = make_grid(10.0, 100)
    assert np.allclose(g.h, 10.0 / 99, rtol=1e-14)
    vol = g.integrate(np.ones(g.n))
    assert abs(vol / (FOUR_PI / 3 * 1000.0) - 1) < 1e-10
    assert np.all(g.weights >= 0)


def test_geometric_grid():
    g = make_grid(20.0, 4096, "geometric(1.002)")
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 20.0
    assert np.all(np.diff(g.nodes) > 0)
    assert g.h[1] / g.h[0] == pytest.approx(1.002, rel=1e-9)
    assert abs(g.integrate(np.ones(g.n)) / (FOUR_PI / 3 * 8000.0) - 1) < 1e-10
    assert np.all(g.weights > 0)


@pytest.mark.parametrize("R, n", [(0.0, 100), (-1.0, 100), (10.0, 15),
                                  (math.inf, 100)])
def test_config_errors(R, n):
    with pytest.raises(ConfigError):
        make_grid(R, n)


def test_unknown_grading():
    with pytest.raises(ConfigError):
        make_grid(10.0, 64, "chebyshev")


def test_gaussian_integral():
    g = make_grid(10.0, 4096)
    val = g.integrate(np.exp(-g.nodes ** 2))
    assert abs(val / math.pi ** 1.5 - 1) < 1e-8


def test_quadrature_converges_second_order():
    errs = []
    for n in (256, 512, 1024):
        g = make_grid(10.0, n)
        errs.append(abs(g.integrate(np.exp(-g.nodes ** 2)) / math.pi ** 1.5 - 1))
    # at least second order (smooth even integrand gives more)
    assert errs[0] / errs[1] > 3.8
    assert errs[1] / errs[2] > 3.8


# -- gradients ----------------------------------------------------------------

def test_gradient_of_constant_and_linear():
    g = make_grid(5.0, 64)
    assert not np.any(radial_gradient(RadialField(g, np.full(g.n, 3.0))).values)
    lin = RadialField(g, g.nodes.copy())
    assert np.allclose(radial_gradient(lin).values, 1.0, rtol=0, atol=1e-14)


def test_gradient_of_gaussian_second_order():
    errs = []
    for n in (200, 400):
        g = make_grid(6.0, n)
        d = gradient_values(g, np.exp(-g.nodes ** 2))
        m = g.midpoints
        errs.append(np.max(np.abs(d + 2 * m * np.exp(-m ** 2))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


# -- norms --------------------------------------------------------------------

def test_w1p_norm_gaussian_p2():
    g = make_grid(12.0, 4096)
    u = from_profile(g, Gaussian())
    # int u^2 = (pi/2)^(3/2), int |u'|^2 = 6 pi^(3/2) / 2^(5/2)
    exact = math.sqrt((math.pi / 2) ** 1.5 + 6 * math.pi ** 1.5 / 2 ** 2.5)
    assert abs(w1p_norm(u, 2.0) / exact - 1) < 1e-6


@pytest.mark.parametrize("p", [1.5, 2.5])
def test_w1p_norm_gaussian_general_p(p):
    g = make_grid(12.0, 4096)
    u = from_profile(g, Gaussian())
    ref = (radial_quad(lambda r: (2 * r * math.exp(-r * r)) ** p)
           + radial_quad(lambda r: math.exp(-p * r * r))) ** (1 / p)
    assert abs(w1p_norm(u, p) / ref - 1) < 1e-6


@pytest.mark.parametrize("q", [1.6, 2.0, 2.5])
def test_d1q_norm_gaussian(q):
    g = make_grid(12.0, 4096)
    u = from_profile(g, Gaussian())
    ref = radial_quad(lambda r: (2 * r * math.exp(-r * r)) ** q) ** (1 / q)
    assert abs(d1q_norm(u, q) / ref - 1) < 1e-6


def test_norms_of_trivial_fields():
    g = make_grid(5.0, 64)
    assert w1p_norm(zeros(g), 2.0) == 0.0
    assert d1q_norm(RadialField(g, np.full(g.n, 2.0)), 1.7) == 0.0
    with pytest.raises(ValueError):
        w1p_norm(zeros(g), 1.0)


@given(st.floats(-50, 50).filter(lambda c: abs(c) > 1e-6),
       st.floats(1.2, 2.9))
def test_norm_homogeneity(c, p):
    g = make_grid(8.0, 128)
    u = from_profile(g, Gaussian(1.0, 0.8))
    assert w1p_norm(u * c, p) == pytest.approx(abs(c) * w1p_norm(u, p),
                                               rel=1e-13)
    assert d1q_norm(u * c, p) == pytest.approx(abs(c) * d1q_norm(u, p),
                                               rel=1e-13)


# -- summation by parts -------------------------------------------------------

@given(st.integers(0, 2 ** 32 - 1), st.floats(1.3, 2.8))
def test_summation_by_parts(seed, q):
    rng = np.random.default_rng(seed)
    g = make_grid(6.0, 64)
    a = rng.standard_normal(g.n)
    b = rng.standard_normal(g.n)
    a[-1] = b[-1] = 0.0
    cov = q_laplacian_covector(RadialField(g, a), q)
    ga, gb = gradient_values(g, a), gradient_values(g, b)
    direct = float(np.sum(g.cell_volumes * np.abs(ga) ** (q - 2) * ga * gb))
    assert float(np.dot(cov, b)) == pytest.approx(direct, rel=1e-12,
                                                  abs=1e-12)


# -- fields -------------------------------------------------------------------

def test_fields_on_different_grids_never_mix():
    g1, g2 = make_grid(5.0, 64), make_grid(5.0, 65)
    g3 = make_grid(5.0, 64, "geometric(1.01)")
    with pytest.raises(GridMismatch):
        zeros(g1) + zeros(g3)
    # equal node arrays count as the same grid
    assert (zeros(g1) + zeros(make_grid(5.0, 64))).grid is g1
    with pytest.raises(GridMismatch):
        zeros(g1) + zeros(g2)
    with pytest.raises(GridMismatch):
        zeros(g1) - zeros(g2)


def test_field_values_are_finite_and_frozen():
    g = make_grid(5.0, 64)
    bad = np.zeros(g.n)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        RadialField(g, bad)
    u = zeros(g)
    with pytest.raises(ValueError):
        u.values[0] = 1.0


def test_profile_tag_follows_scalar_multiples():
    g = make_grid(5.0, 64)
    u = from_profile(g, Gaussian(2.0, 1.5)) * 3.0
    assert u.profile == Gaussian(6.0, 1.5)


def test_bump_profile_is_compact():
    b = Bump(2.0, 1.5)
    assert b(0.0) == pytest.approx(2.0)
    assert b(1.5) == 0.0 and b(3.0) == 0.0
    assert b.rescaled(2.0, 1.0) == Bump(4.0, 0.75)


# -- rescaling ----------------------------------------------------------------

def test_rescale_identity():
    g = make_grid(8.0, 256)
    u = strip_profile(from_profile(g, Gaussian()))
    assert rescale_field(u, 1.0, 2.0) is u


@pytest.mark.parametrize("p", [2.0, 2.5])
def test_rescale_mass_law(p):
    # same grid: quadrature-limited, the narrowed Gaussian needs a fine grid
    g = make_grid(10.0, 16384)
    u = from_profile(g, Gaussian())
    ut = rescale_field(u, 2.0, 0.0)
    assert lp_integral(ut, p) / lp_integral(u, p) == pytest.approx(
        2.0 ** -3, rel=1e-8)


@pytest.mark.parametrize("p", [2.0, 2.5])
def test_rescale_mass_law_commensurate(p):
    g = make_grid(10.0, 1024)
    u = from_profile(g, Gaussian())
    ut = rescale_field(u, 2.0, 0.0, commensurate=True)
    assert lp_integral(ut, p) / lp_integral(u, p) == pytest.approx(
        2.0 ** -3, rel=1e-13)


def test_rescale_group_law_analytic():
    g = make_grid(10.0, 512)
    u = from_profile(g, Gaussian(1.3, 0.9))
    a = rescale_field(rescale_field(u, 1.7, 2.0), 1.3, 2.0)
    b = rescale_field(u, 1.7 * 1.3, 2.0)
    assert np.allclose(a.values, b.values, rtol=1e-13, atol=1e-15)


def test_rescale_group_law_sampled():
    g = make_grid(10.0, 2048)
    u = strip_profile(from_profile(g, Gaussian(1.0, 1.0)))
    a = rescale_field(rescale_field(u, 1.5, 1.0), 1.2, 1.0)
    b = rescale_field(u, 1.8, 1.0)
    assert np.max(np.abs(a.values - b.values)) < 1e-6


def test_rescale_sampled_matches_analytic():
    g = make_grid(10.0, 2048)
    prof = Gaussian(1.0, 1.0)
    u = strip_profile(from_profile(g, prof))
    ut = rescale_field(u, 2.0, 2.0)
    exact = from_profile(g, prof.rescaled(2.0, 2.0))
    assert np.max(np.abs(ut.values - exact.values)) < 1e-5 * 4.0


def test_rescale_commensurate_grid_is_exact():
    g = make_grid(10.0, 512)
    u = from_profile(g, Gaussian())
    ut = rescale_field(u, 2.0, 1.5, commensurate=True)
    assert ut.grid.R == 5.0
    assert np.array_equal(ut.values, 2.0 ** 1.5 * u.values)


def test_extrapolation_warning():
    g = make_grid(4.0, 256)
    u = strip_profile(from_profile(g, Gaussian(1.0, 0.3)))
    with pytest.warns(ExtrapolationWarning):
        rescale_field(u, 0.5, 1.0)
    narrow = strip_profile(from_profile(g, Gaussian(1.0, 20.0)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rescale_field(narrow, 0.5, 1.0)


def test_rescale_rejects_nonpositive_t():
    g = make_grid(4.0, 64)
    with pytest.raises(ValueError):
        rescale_field(zeros(g), 0.0, 1.0)


# -- serialization ------------------------------------------------------------

@pytest.mark.parametrize("grading", ["uniform", "geometric(1.01)"])
def test_field_roundtrip_bit_exact(tmp_path, rng, grading):
    g = make_grid(7.0, 200, grading)
    vals = rng.standard_normal(g.n) * 10.0 ** rng.uniform(-300, 300, g.n)
    vals[-1] = 0.0
    u = RadialField(g, vals, Gaussian(1.1, 0.4))
    pio.write_field(tmp_path / "u.csv", u)
    back = pio.load_field(tmp_path / "u.csv")
    assert np.array_equal(back.values, u.values)
    assert np.array_equal(back.grid.nodes, g.nodes)
    assert back.profile == u.profile


def test_scaled_grid_roundtrip(tmp_path):
    g = make_grid(7.0, 100).scaled(1 / 3)
    u = from_function(g, lambda r: np.exp(-r))
    pio.write_field(tmp_path / "u.csv", u)
    back = pio.load_field(tmp_path / "u.csv")
    assert np.array_equal(back.grid.nodes, g.nodes)
    assert np.array_equal(back.grid.weights, g.weights)
