import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from nlmarkov.errors import DomainError
from nlmarkov.grid import Grid, GridDensity
from nlmarkov.initial import Uniform
from nlmarkov.oracles import (
    BarenblattExponents,
    barenblatt,
    barenblatt_normalization,
    barenblatt_profile,
    barenblatt_radius,
    cole_hopf_burgers,
    heat_kernel,
    heat_peak,
)
from nlmarkov.verify import w1_grid


def test_exponents_m2_d1():
    ex = BarenblattExponents.of(2, 1)
    assert ex.alpha == pytest.approx(1 / 3)
    assert ex.beta == pytest.approx(1 / 3)
    assert ex.k == pytest.approx(1 / 12)


def test_normalization_m2_d1_closed_form():
    # integral of the truncated parabola (C - x^2/12)^+ is (4/3) C^(3/2) sqrt(12)
    closed = (3 / (4 * math.sqrt(12))) ** (2 / 3)
    assert barenblatt_normalization(2, 1) == pytest.approx(closed, rel=1e-12)
    assert closed == pytest.approx(0.36056, abs=1e-5)


@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_profile_has_unit_mass(m, d):
    C = barenblatt_normalization(m, d)
    R = barenblatt_radius(m, d, 1.0, C)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)

    def radial(r):
        return area * r ** (d - 1) * barenblatt_profile(m, d, 0.0, np.zeros(d), 1.0, np.array([[r] + [0.0] * (d - 1)]))[0]

    mass, _ = integrate.quad(radial, 0, R, epsabs=1e-13, epsrel=1e-12, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_normalization_ordering_in_m():
    # ordering measured, not assumed: C(2,1) ~ 0.3606, C(3,1) ~ 0.1838
    c2, c3 = barenblatt_normalization(2, 1), barenblatt_normalization(3, 1)
    ex3 = BarenblattExponents.of(3, 1)
    # independent evaluation for m = 3: mass of (C - k x^2)^(1/2) is C pi / (2 sqrt(k))
    assert c3 == pytest.approx(2 * math.sqrt(ex3.k) / math.pi, rel=1e-10)
    assert c2 > c3


def test_peak_equals_normalization():
    C = barenblatt_normalization(2, 1)
    assert barenblatt_profile(2, 1, 0.0, 0.0, 1.0, 0.0) == pytest.approx(C)


@given(st.floats(0.05, 5.0), st.floats(-1.0, 1.0))
def test_support_radius(tau, x0):
    R = barenblatt_radius(2, 1, tau)
    C = barenblatt_normalization(2, 1)
    assert R == pytest.approx(math.sqrt(C / (1 / 12)) * tau ** (1 / 3))
    assert barenblatt_profile(2, 1, 0.0, x0, tau, x0 + 1.0001 * R) == 0.0
    assert barenblatt_profile(2, 1, 0.0, x0, tau, x0 + 0.999 * R) > 0.0


@given(st.floats(0.1, 3.0), st.floats(1.5, 3.0))
def test_self_similarity(tau, lam):
    # u(tau, x) = lam^alpha u(lam tau, lam^beta x)
    ex = BarenblattExponents.of(2, 1)
    x = np.linspace(-2, 2, 21) * tau ** ex.beta
    a = barenblatt_profile(2, 1, 0.0, 0.0, tau, x)
    b = barenblatt_profile(2, 1, 0.0, 0.0, lam * tau, lam**ex.beta * x)
    assert np.allclose(a, lam**ex.alpha * b, rtol=1e-10, atol=1e-14)


def test_barenblatt_grid_density_variance():
    g = Grid(-6, 6, 4000)
    u = barenblatt(2, 1, 0.0, 0.0, 1.0, g)
    R = barenblatt_radius(2, 1, 1.0)
    assert u.mass == pytest.approx(1.0, abs=1e-12)
    # variance of (1 - (x/R)^2)^p is R^2 / (2p + 3)
    assert u.variance() == pytest.approx(R**2 / 5, rel=1e-5)


def test_barenblatt_radial_grid_d2():
    R = barenblatt_radius(2, 2, 1.0)
    u = barenblatt(2, 2, 0.0, np.zeros(2), 1.0, Grid(0.0, 1.5 * R, 500))
    assert u.mass == pytest.approx(1.0, abs=1e-12)


def test_barenblatt_errors():
    g = Grid(-5, 5, 100)
    with pytest.raises(DomainError):
        barenblatt(2, 1, 1.0, 0.0, 1.0, g)
    with pytest.raises(DomainError, match="heat_kernel"):
        barenblatt(1, 1, 0.0, 0.0, 1.0, g)
    with pytest.raises(DomainError):
        barenblatt(2, 1, 0.0, 0.0, 1.0, Grid(-0.5, 0.5, 100))


def test_heat_kernel_moments_and_peak():
    g = Grid(-12, 12, 6000)
    u = heat_kernel(0.0, 0.3, 1.5, g)
    assert u.variance() == pytest.approx(3.0, rel=1e-5)
    assert u.mean() == pytest.approx(0.3, abs=1e-10)
    assert u.sup() == pytest.approx(heat_peak(0.0, 1.5), rel=1e-5)
    with pytest.raises(DomainError):
        heat_kernel(1.0, 0.0, 1.0, g)


def test_heat_kernel_chapman_kolmogorov():
    g = Grid(-12, 12, 2400)
    direct = heat_kernel(0.0, 0.0, 1.0, g)
    mid = heat_kernel(0.0, 0.0, 0.5, g)
    # mix y -> heat(0.5, y, 1) with weights mu_{0.5}(dy), using exact Gaussian CDF per edge
    sd = 1.0
    F = np.zeros(g.n_cells + 1)
    for y, w in zip(g.centers, mid.values * g.h):
        F += w * special.ndtr((g.edges - y) / sd)
    composed = GridDensity(g, np.diff(F) / g.h)
    assert direct.l1(composed) < 1e-4


def _cole_hopf_uniform_log_phi(x, tau):
    sig = math.sqrt(2 * tau)
    left = special.ndtr((-0.5 - x) / sig)
    right = math.exp(-0.5) * special.ndtr((x - 0.5) / sig)
    mid = np.exp(-(x + 0.5) / 2 + sig**2 / 8) * (
        special.ndtr((0.5 - x + sig**2 / 2) / sig) - special.ndtr((-0.5 - x + sig**2 / 2) / sig)
    )
    return np.log(left + mid + right)


@pytest.mark.parametrize("tau", [0.05, 0.5, 2.0])
def test_cole_hopf_against_closed_form_uniform(tau):
    g = Grid(-8, 10, 1800)
    zeta = Uniform(-0.5, 0.5).to_density(g)
    u = cole_hopf_burgers(zeta, 0.0, tau)
    lp = _cole_hopf_uniform_log_phi(g.edges, tau)
    exact = -2 * np.diff(lp) / g.h
    assert np.max(np.abs(u.values - exact)) < 1e-8


def test_cole_hopf_mass_and_bound():
    g = Grid(-8, 10, 1800)
    zeta = Uniform(-0.5, 0.5).to_density(g)
    u = cole_hopf_burgers(zeta, 0.0, 0.5)
    assert abs(u.mass - 1.0) < 1e-6
    assert u.values.min() >= 0.0
    assert u.sup() <= zeta.sup() + 1e-12


def test_cole_hopf_short_time_limit():
    g = Grid(-3, 3, 1200)
    zeta = Uniform(-0.5, 0.5).to_density(g)
    u = cole_hopf_burgers(zeta, 0.0, 1e-3)
    assert w1_grid(u, zeta) < 5e-3


def test_cole_hopf_errors():
    g = Grid(-3, 3, 60)
    with pytest.raises(DomainError):
        cole_hopf_burgers(Uniform().to_density(g), 1.0, 1.0)


@settings(max_examples=10)
@given(st.floats(0.05, 1.0), st.floats(-0.5, 0.5))
def test_cole_hopf_mass_property(tau, shift):
    g = Grid(-10, 12, 900)
    zeta = Uniform(shift - 0.5, shift + 0.5).to_density(g)
    u = cole_hopf_burgers(zeta, 0.0, tau)
    assert abs(u.mass - 1.0) < 1e-6
    assert u.sup() <= 1.0 + 1e-9
