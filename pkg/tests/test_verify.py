import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gaussian_density
from nlmarkov import rng
from nlmarkov.coefficients import registry_lookup
from nlmarkov.errors import InvariantError, SetupError
from nlmarkov.grid import Grid, GridDensity
from nlmarkov.initial import Dirac, Gaussian, Uniform
from nlmarkov.particles import PathStore, simulate_ddsde
from nlmarkov.verify import (
    BinSpec,
    MarkovConfig,
    ParticleRunner,
    PdeRunner,
    ProbeSpec,
    compare_bins,
    compare_with_point_starts,
    direct_expectation,
    fdd_standard_error,
    estimate_conditional_kernel,
    marginal_distance,
    reconstruct_fdd,
    restarted_kernel,
    test_ck_violation as ck_violation,
    test_flow_property as flow_property,
    test_nonlinear_markov as nonlinear_markov,
    w1_grid,
    w1_samples,
    w1_samples_grid,
    wrong_marginal_control,
)

HEAT = registry_lookup("heat")
PME2 = registry_lookup("pme", m=2)
BURGERS = registry_lookup("burgers")


# -- distances ------------------------------------------------------------------


def test_identical_densities():
    g = Grid(-5, 5, 100)
    a = gaussian_density(g)
    d = marginal_distance(a, a)
    assert d.w1 == 0.0 and d.l1 == 0.0


def test_point_masses_distance_one():
    assert marginal_distance(np.array([0.0]), np.array([1.0])).w1 == pytest.approx(1.0)
    g = Grid(-0.5, 1.5, 2000)
    a = GridDensity.dirac(g, 0.0)
    b = GridDensity.dirac(g, 1.0)
    assert w1_grid(a, b) == pytest.approx(1.0, abs=g.h)


def test_uniforms_half():
    g = Grid(-1, 3, 400)
    a, b = Uniform(0, 1).to_density(g), Uniform(0, 2).to_density(g)
    # closed form: int_0^2 |F_a - F_b| = int_0^1 x/2 dx + int_1^2 (1 - x/2) dx = 1/4 + 1/4
    assert w1_grid(a, b) == pytest.approx(0.5, abs=1e-12)
    # different grids for the two arguments
    assert w1_grid(a, Uniform(0, 2).to_density(Grid(-0.5, 2.5, 36))) == pytest.approx(0.5, abs=1e-12)


def test_sample_distance_matches_scipy_on_fine_grid():
    x = rng.normals(3, 1, 0, 2000)
    g = Grid(-10, 10, 200_000)
    y = rng.normals(4, 1, 0, 2000) * 1.3
    # density of y as narrow histogram: W1 to it equals sample W1 up to the cell width
    hist = np.histogram(y, g.edges)[0] / (y.size * g.h)
    b = GridDensity(g, hist)
    assert w1_samples_grid(x, b) == pytest.approx(w1_samples(x, y), abs=2 * g.h)


def test_marginal_distance_dispatch():
    g = Grid(-6, 6, 600)
    u = gaussian_density(g)
    x = rng.normals(1, 1, 0, 500)
    assert marginal_distance(x, u).l1 is None
    assert marginal_distance(x, u).w1 == marginal_distance(u, x).w1
    other = gaussian_density(Grid(-7, 7, 300))
    assert marginal_distance(u, other).l1 is None


densities = st.lists(st.floats(0.0, 3.0), min_size=5, max_size=40).filter(lambda v: sum(v) > 0.5)


@given(densities, densities, densities)
def test_w1_axioms(va, vb, vc):
    def mk(v, lo):
        return GridDensity.from_values(Grid(lo, lo + 3.0, len(v)), v, normalize=True)

    a, b, c = mk(va, 0.0), mk(vb, -0.5), mk(vc, 0.25)
    assert w1_grid(a, b) == pytest.approx(w1_grid(b, a), abs=1e-12)
    assert w1_grid(a, c) <= w1_grid(a, b) + w1_grid(b, c) + 1e-12
    assert w1_grid(a, a) == pytest.approx(0.0, abs=1e-12)
    assert w1_grid(a, b) >= 0


@given(st.floats(-1, 1), st.floats(0.01, 0.5))
def test_w1_shift_equals_translation(x0, d):
    g = Grid(-5, 5, 1000)
    a = gaussian_density(g, x0, 0.3)
    b = gaussian_density(g, x0 + d, 0.3)
    assert w1_grid(a, b) == pytest.approx(d, rel=1e-6)


# -- flow property ---------------------------------------------------------------


@pytest.mark.parametrize("c", [PME2, HEAT, BURGERS], ids=["pme2", "heat", "burgers"])
def test_pde_flow_property(c):
    datum = Dirac(0.0) if c is not BURGERS else Uniform(-0.5, 0.5)
    rep = flow_property(PdeRunner(c, n_cells=1024), 0.0, datum, 0.5, 1.0, 1e-3)
    assert rep.passed, rep.summary()
    assert rep.metric == "L1"


@pytest.mark.parametrize("r", [0.0, 1.0])
def test_pde_flow_degenerate_restart(r):
    rep = flow_property(PdeRunner(PME2, n_cells=512), 0.0, Gaussian(0.0, 0.1), r, 1.0, 1e-12)
    assert rep.distance == 0.0


def test_particle_flow_property_heat():
    rep = flow_property(ParticleRunner(HEAT, N=100_000, dt=1e-3, seed=1), 0.0, Dirac(0.0), 0.5, 1.0, 0.03)
    assert rep.passed, rep.summary()


def test_particle_flow_degenerate_restart_at_s():
    rep = flow_property(ParticleRunner(PME2, N=20_000, dt=5e-3, seed=2), 0.0, Gaussian(0.0, 0.2), 0.0, 0.5, 0.05)
    assert rep.passed


def test_flow_order_checked():
    with pytest.raises(InvariantError):
        flow_property(PdeRunner(HEAT), 0.0, Dirac(0.0), 1.5, 1.0, 1e-3)


# -- conditional kernels -----------------------------------------------------------


@pytest.fixture(scope="module")
def heat_paths():
    return simulate_ddsde(HEAT, Dirac(0.0), 0.0, [0.0, 0.25, 0.5, 1.0], 30_000, 5e-3, seed=11)


def test_kernel_rows_are_probability_vectors(heat_paths):
    k = estimate_conditional_kernel(heat_paths, 0.5, 1.0, BinSpec(min_count=200))
    assert np.allclose(k.rows.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(k.counts >= 200)
    assert 0.0 <= k.dropped_mass < 0.05
    assert len(k.members) == k.retained.size


def test_deterministic_paths_give_point_mass_rows():
    c = registry_lookup("meanfield", h={"kind": "bump", "amp": 0.0}, sigma=0.0)
    p = simulate_ddsde(c, Uniform(-1, 1), 0.0, [0.0, 0.5, 1.0], 5000, 0.05, seed=1)
    k = estimate_conditional_kernel(p, 0.5, 1.0, BinSpec(width=0.1, min_count=10))
    assert np.all(np.sort(k.rows, axis=1)[:, -1] == 1.0)


def test_kernel_errors(heat_paths):
    with pytest.raises(InvariantError):
        estimate_conditional_kernel(heat_paths, 1.0, 0.5)
    with pytest.raises(SetupError):
        estimate_conditional_kernel(heat_paths, 0.5, 1.0, BinSpec(min_count=10**6))
    with pytest.raises(InvariantError):
        estimate_conditional_kernel(heat_paths, 0.5, 1.0, BinSpec(width=-1.0))


def test_bins_anchored_at_multiples():
    e = BinSpec().edges_for(np.array([0.13, 0.91]), 0.25)
    assert np.allclose(e, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_heat_point_start_gap_small(heat_paths):
    k = estimate_conditional_kernel(heat_paths, 0.5, 1.0, BinSpec(width=0.1, min_count=500))
    gaps = compare_with_point_starts(k, heat_paths, HEAT, n_cells=512)
    # bin half-width plus three standard errors of an empirical W1 (sd of the transition is 1)
    assert np.all(gaps < 0.05 + 3.0 / np.sqrt(k.counts))


# -- bootstrap comparison ---------------------------------------------------------


def test_compare_bins_same_law_passes_and_shift_fails():
    gen = np.random.default_rng(0)
    a = [gen.normal(0, 1, 800) for _ in range(4)]
    b = [gen.normal(0, 1, 800) for _ in range(4)]
    edges = np.linspace(-6, 6, 61)
    same = compare_bins(a, b, np.arange(4.0), edges, 200, 0.99, 1)
    assert same.all_pass
    assert np.all(same.radius >= same.pointwise_radius * 0.5)
    shifted = compare_bins(a, [x + 0.5 for x in b], np.arange(4.0), edges, 200, 0.99, 1)
    assert not np.any(shifted.passed)


def test_compare_bins_reproducible():
    gen = np.random.default_rng(1)
    a = [gen.normal(0, 1, 300)]
    b = [gen.normal(0, 1, 300)]
    e = np.linspace(-5, 5, 11)
    r1 = compare_bins(a, b, np.zeros(1), e, 100, 0.99, 7).radius
    r2 = compare_bins(a, b, np.zeros(1), e, 100, 0.99, 7).radius
    assert np.array_equal(r1, r2)


# -- Markov test -------------------------------------------------------------------


def small_cfg(**kw):
    base = dict(N=30_000, dt=5e-3, n_boot=100, bins=BinSpec(factor=4.0, min_count=300), n_cells=512)
    base.update(kw)
    return MarkovConfig(**base)


def test_markov_heat_small_scale():
    rep = nonlinear_markov(HEAT, 0.0, Dirac(0.0), 0.5, 1.0, small_cfg())
    assert rep.verdict, rep.summary()
    s = rep.summary()
    assert s["verdict"] == "pass" and s["retained_bins"] == len(rep.rows())
    assert "two_point_verdict" in s


@pytest.mark.parametrize("pair", [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10)])
def test_markov_seed_symmetry(pair):
    a, b = pair
    v1 = nonlinear_markov(HEAT, 0.0, Dirac(0.0), 0.5, 1.0, small_cfg(seed_a=a, seed_b=b, two_point=False))
    v2 = nonlinear_markov(HEAT, 0.0, Dirac(0.0), 0.5, 1.0, small_cfg(seed_a=b, seed_b=a, two_point=False))
    assert v1.verdict == v2.verdict


def test_markov_setup_error_on_wrong_start():
    with pytest.raises(SetupError):
        nonlinear_markov(PME2, 0.0, Dirac(0.0), 0.5, 1.0,
                         small_cfg(start_override=Gaussian(2.0, 1.0), two_point=False))


def test_markov_reuses_run_a():
    a = simulate_ddsde(HEAT, Dirac(0.0), 0.0, [0.0, 0.5, 1.0], 30_000, 5e-3, seed=1)
    rep = nonlinear_markov(HEAT, 0.0, Dirac(0.0), 0.5, 1.0, small_cfg(run_a=a, two_point=False))
    assert rep.meta["seed_a"] == 1
    with pytest.raises(SetupError):
        nonlinear_markov(HEAT, 0.0, Dirac(0.0), 0.25, 1.0, small_cfg(run_a=a))


def test_wrong_marginal_control_is_heat_marginal():
    g = wrong_marginal_control(0.0, 0.5)
    assert g.mean == 0.0 and g.var == pytest.approx(1.0)


def test_markov_order_checked():
    with pytest.raises(InvariantError):
        nonlinear_markov(HEAT, 0.0, Dirac(0.0), 1.0, 0.5, small_cfg())


# -- fdd ------------------------------------------------------------------------------


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 3), st.floats(0.1, 1.0))
def test_fdd_constant_one(seed, n_kernels, width):
    gen = np.random.default_rng(seed)
    T = n_kernels + 1
    steps = gen.normal(0, 1, (2000, T)).cumsum(axis=1)
    paths = PathStore(np.arange(T, dtype=float), steps, seed)
    ks = [estimate_conditional_kernel(paths, i, i + 1, BinSpec(width=width, min_count=5)) for i in range(n_kernels)]
    val = reconstruct_fdd(ks, paths.ensemble_at(0.0), lambda *a: np.ones(np.broadcast_shapes(*[x.shape for x in a])))
    assert val == pytest.approx(1.0, abs=1e-9)


def test_fdd_without_kernels_is_marginal_mean():
    g = Grid(-5, 5, 500)
    u = gaussian_density(g, 0.7, 0.5)
    assert reconstruct_fdd([], u, lambda x: x) == pytest.approx(u.mean(), abs=1e-12)


def test_fdd_heat_covariance_small_scale(heat_paths):
    # min_count=1 keeps every bin, so no tail mass is dropped
    ks = [estimate_conditional_kernel(heat_paths, 0.25, 0.5, BinSpec(width=0.05, min_count=1)),
          estimate_conditional_kernel(heat_paths, 0.5, 1.0, BinSpec(width=0.05, min_count=1))]
    f = lambda x0, x1, x2: x1 * x2  # noqa: E731
    res = reconstruct_fdd(ks, heat_paths.ensemble_at(0.25), f, times=[0.25, 0.5, 1.0], return_details=True)
    direct, se = direct_expectation(heat_paths, f, [0.25, 0.5, 1.0])
    assert res.dropped_mass == pytest.approx(0.0, abs=1e-12)
    assert abs(res.value - direct) <= 3 * math.sqrt(2) * se
    assert abs(direct - 1.0) <= 4 * se


def test_fdd_with_restarted_kernel(heat_paths):
    k = restarted_kernel(HEAT, 0.0, Dirac(0.0), 0.5, 1.0, 30_000, 5e-3, seed=12, n_cells=512)
    assert k.counts.sum() == 30_000 and k.dropped_mass == 0.0
    f = lambda a, b: a * b  # noqa: E731
    mu0 = heat_paths.ensemble_at(0.5)
    rec = reconstruct_fdd([k], mu0, f, [0.5, 1.0])
    direct, se_d = direct_expectation(heat_paths, f, [0.5, 1.0])
    se = math.hypot(se_d, fdd_standard_error([k], mu0, f, 30_000))
    assert abs(rec - direct) <= 3 * se


def test_fdd_chain_checks(heat_paths):
    k1 = estimate_conditional_kernel(heat_paths, 0.25, 0.5)
    k2 = estimate_conditional_kernel(heat_paths, 0.5, 1.0)
    with pytest.raises(InvariantError):
        reconstruct_fdd([k2, k1], heat_paths.ensemble_at(0.5), lambda a, b, c: a)
    with pytest.raises(InvariantError):
        reconstruct_fdd([k1, k2], heat_paths.ensemble_at(0.25), lambda a, b, c: a, times=[0.0, 0.5, 1.0])


# -- Chapman-Kolmogorov ------------------------------------------------------------------


def test_ck_heat_holds():
    rep = ck_violation(1, 0.0, 0.0, 0.5, 1.0, n_cells=256)
    assert rep.residual <= 1e-2
    assert rep.verdict_line() == "CK-residual: small; verdict: holds (linear)"
    assert rep.summary()["verdict"] == "holds"


def test_ck_degenerate_r_equals_t():
    rep = ck_violation(2, 0.0, 0.0, 1.0, 1.0, n_cells=256)
    assert rep.residual <= 1e-12


def test_ck_pme_violated_small_grid():
    heat = ck_violation(1, 0.0, 0.0, 0.5, 1.0, n_cells=256)
    pme = ck_violation(2, 0.0, 0.0, 0.5, 1.0, n_cells=256)
    assert pme.residual >= 5 * heat.residual
    assert pme.verdict_line().endswith("(nonlinear)")


def test_ck_coarse_probes_rejected():
    with pytest.raises(SetupError):
        ck_violation(2, 0.0, 0.0, 0.5, 1.0, n_cells=256, probes=ProbeSpec(stride=40, coarse_tol=1e-4))


def test_ck_argument_checks():
    with pytest.raises(InvariantError):
        ck_violation(2, 0.0, 0.0, 1.0, 0.5)
    with pytest.raises(InvariantError):
        ck_violation(0.5, 0.0, 0.0, 0.5, 1.0)
