"""Checks of the structural properties on PDE flows and particle path ensembles.

Distances are exact one-dimensional Wasserstein-1 distances computed from
CDFs.  Conditioning on the position at time ``r`` is done by binning, and
conditional laws are compared with a pooled-null bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats as sstats

from . import rng
from .coefficients import CoefficientSet, registry_lookup
from .errors import InvariantError, SetupError
from .grid import Grid, GridDensity
from .initial import Dirac, Gaussian, as_datum
from .particles import (
    KdeSpec,
    ParticleEnsemble,
    PathStore,
    estimate_density,
    silverman_bandwidth,
    simulate_ddsde,
)
from .pde import T_BURN, auto_grid, solve_nlfpke, solve_nlfpke_batch

# -- distances ------------------------------------------------------------------


def _abs_linear_integral(fa: np.ndarray, fb: np.ndarray, L: np.ndarray) -> float:
    """Sum over intervals of ``int |f|`` for ``f`` linear from ``fa`` to ``fb`` over length ``L``."""
    same = fa * fb >= 0
    s = np.abs(fa) + np.abs(fb)
    out = np.where(same, 0.5 * L * s, 0.5 * L * (fa * fa + fb * fb) / np.where(s > 0, s, 1.0))
    return float(out.sum())


def w1_grid(a: GridDensity, b: GridDensity) -> float:
    """Exact W1 between two grid densities (piecewise-linear CDFs, any two grids)."""
    knots = np.union1d(a.grid.edges, b.grid.edges)
    d = a.cdf(knots) / a.mass - b.cdf(knots) / b.mass
    return _abs_linear_integral(d[:-1], d[1:], np.diff(knots))


def w1_samples_grid(x: np.ndarray, b: GridDensity) -> float:
    """Exact W1 between an empirical measure and a grid density."""
    xs = np.sort(np.asarray(x, dtype=np.float64))
    knots = np.union1d(xs, b.grid.edges)
    # empirical CDF is constant on [k_i, k_{i+1}) with the right-continuous value at k_i
    Fe = np.searchsorted(xs, knots[:-1], side="right") / xs.size
    G = b.cdf(knots) / b.mass
    return _abs_linear_integral(Fe - G[:-1], Fe - G[1:], np.diff(knots))


def w1_samples(x: np.ndarray, y: np.ndarray) -> float:
    return float(sstats.wasserstein_distance(x, y))


@dataclass(frozen=True)
class Distances:
    w1: float
    l1: float | None


def _positions(a) -> np.ndarray | None:
    if isinstance(a, ParticleEnsemble):
        return a.positions
    if isinstance(a, np.ndarray):
        return a
    return None


def marginal_distance(a, b) -> Distances:
    """W1 and (grid against grid on the same grid only) L1 between two marginals.

    ``a`` and ``b`` are grid densities, ensembles or position arrays.
    """
    xa, xb = _positions(a), _positions(b)
    if xa is not None and xb is not None:
        return Distances(w1_samples(xa, xb), None)
    if xa is not None:
        return Distances(w1_samples_grid(xa, b), None)
    if xb is not None:
        return Distances(w1_samples_grid(xb, a), None)
    l1 = a.l1(b) if a.grid.same_as(b.grid) else None
    return Distances(w1_grid(a, b), l1)


# -- flow property ----------------------------------------------------------------


@dataclass
class PdeRunner:
    """Solver handle: grid-PDE marginals of ``c``."""

    c: CoefficientSet
    n_cells: int = 1024
    grid: Grid | None = None

    kind = "pde"

    def grid_for(self, zeta, s, t) -> Grid:
        return self.grid or auto_grid(self.c, as_datum(zeta), s, t, self.n_cells)


@dataclass
class ParticleRunner:
    """Simulator handle: interacting-particle marginals of ``c``."""

    c: CoefficientSet
    N: int = 100_000
    dt: float = 1e-3
    kde: KdeSpec = field(default_factory=KdeSpec)
    seed: int = 0
    restart_seed: int | None = None

    kind = "particles"


@dataclass
class FlowReport:
    passed: bool
    metric: str
    distance: float
    tol: float
    s: float
    r: float
    t: float

    def summary(self) -> dict[str, Any]:
        return {
            "test": "flow-property",
            "metric": self.metric,
            "distance": self.distance,
            "tol": self.tol,
            "s": self.s,
            "r": self.r,
            "t": self.t,
            "verdict": "pass" if self.passed else "fail",
        }


def test_flow_property(handle, s: float, zeta, r: float, t: float, tol: float) -> FlowReport:
    """Compare the marginal at ``t`` from ``(s, zeta)`` with the one restarted at ``(r, mu_r)``.

    PDE handles compare an uninterrupted solve on ``[s, t]`` with a solve
    stopped at ``r`` and restarted from its own output (L1).  Particle handles
    restart from the density estimate of the ensemble at ``r`` with a fresh
    seed (W1).
    """
    if not s <= r <= t:
        raise InvariantError("need s <= r <= t")
    if handle.kind == "pde":
        grid = handle.grid_for(zeta, s, t)
        u0 = zeta if isinstance(zeta, GridDensity) else as_datum(zeta).to_density(grid, s)
        direct = solve_nlfpke(handle.c, u0, s, [s, t]).densities[-1] if t > s else u0
        mid = solve_nlfpke(handle.c, u0, s, [s, r]).densities[-1] if r > s else u0
        again = solve_nlfpke(handle.c, mid, r, [r, t]).densities[-1] if t > r else mid
        d = direct.l1(again)
        return FlowReport(d <= tol, "L1", d, tol, s, r, t)
    times = sorted({s, r, t})
    a = simulate_ddsde(handle.c, zeta, s, times, handle.N, handle.dt, handle.kde, handle.seed)
    if r > s:
        start = estimate_density(a.ensemble_at(r), handle.kde)
    else:
        start = zeta
    seed_b = handle.seed + 1 if handle.restart_seed is None else handle.restart_seed
    b = simulate_ddsde(handle.c, start, r, sorted({r, t}), handle.N, handle.dt, handle.kde, seed_b)
    d = w1_samples(a.at(t), b.at(t))
    return FlowReport(d <= tol, "W1", d, tol, s, r, t)


test_flow_property.__test__ = False


# -- conditional kernels ------------------------------------------------------------


@dataclass
class BinSpec:
    """Position bins anchored at integer multiples of ``width``.

    ``width=None`` uses ``factor`` times the Silverman bandwidth of the
    positions at ``r``.  Bins with fewer than ``min_count`` samples are dropped.
    """

    width: float | None = None
    min_count: int = 200
    factor: float = 2.0

    def edges_for(self, x: np.ndarray, width: float) -> np.ndarray:
        lo = math.floor(float(np.min(x)) / width)
        hi = math.ceil(float(np.max(x)) / width)
        if hi <= lo:
            hi = lo + 1
        return np.arange(lo, hi + 1) * width


def _bin_index(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    j = np.searchsorted(edges, x, side="right") - 1
    return np.clip(j, 0, len(edges) - 2)


def _resolve_width(x: np.ndarray, spec: BinSpec) -> float:
    if spec.width is not None:
        if not spec.width > 0:
            raise InvariantError("bin width must be positive")
        return float(spec.width)
    return spec.factor * silverman_bandwidth(x)


@dataclass
class ConditionalKernel:
    """Row-stochastic estimate of the law at ``t`` given the position bin at ``r``.

    ``rows[k]`` is the distribution over ``z_edges`` bins for the retained
    ``y``-bin ``retained[k]``.
    """

    r: float
    t: float
    y_edges: np.ndarray
    z_edges: np.ndarray
    retained: np.ndarray
    rows: np.ndarray
    counts: np.ndarray
    dropped_mass: float
    members: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def y_centers(self) -> np.ndarray:
        return 0.5 * (self.y_edges[:-1] + self.y_edges[1:])[self.retained]

    @property
    def z_centers(self) -> np.ndarray:
        return 0.5 * (self.z_edges[:-1] + self.z_edges[1:])


def estimate_conditional_kernel(paths: PathStore, r: float, t: float,
                                bins: BinSpec | None = None) -> ConditionalKernel:
    """Bin paths by their position at ``r``; each retained row is the histogram at ``t``."""
    bins = bins or BinSpec()
    if r > t:
        raise InvariantError("need r <= t")
    xr, xt = paths.at(r), paths.at(t)
    w = _resolve_width(xr, bins)
    y_edges = bins.edges_for(xr, w)
    z_edges = bins.edges_for(xt, w)
    iy = _bin_index(xr, y_edges)
    counts_all = np.bincount(iy, minlength=len(y_edges) - 1)
    retained = np.flatnonzero(counts_all >= bins.min_count)
    if retained.size == 0:
        raise SetupError(f"no position bin at r = {r} holds {bins.min_count} samples")
    iz = _bin_index(xt, z_edges)
    nz = len(z_edges) - 1
    rows = np.zeros((retained.size, nz))
    members = []
    for k, j in enumerate(retained):
        sel = np.flatnonzero(iy == j)
        members.append(sel)
        rows[k] = np.bincount(iz[sel], minlength=nz) / sel.size
    dropped = 1.0 - counts_all[retained].sum() / xr.size
    return ConditionalKernel(r, t, y_edges, z_edges, retained, rows, counts_all[retained], float(dropped),
                             members)


# -- nonlinear Markov test ----------------------------------------------------------------


@dataclass
class MarkovConfig:
    """Settings of :func:`test_nonlinear_markov`.

    ``start`` selects where Run B's starting marginal comes from: ``"pde"``
    (grid solution of the nonlinear equation) or ``"particles"`` (density
    estimate of Run A at ``r``).  ``start_override`` replaces it outright (used
    for the wrong-marginal control, together with ``check_setup=False``).
    """

    N: int = 100_000
    dt: float = 1e-3
    kde: KdeSpec = field(default_factory=KdeSpec)
    seed_a: int = 1
    seed_b: int = 2
    bins: BinSpec = field(default_factory=lambda: BinSpec(factor=4.0))
    n_boot: int = 200
    level: float = 0.99
    start: str = "pde"
    n_cells: int = 1024
    setup_tol: float = 0.05
    check_setup: bool = True
    start_override: Any = None
    run_a: PathStore | None = None
    two_point: bool = True
    r_prime: float | None = None
    boot_seed: int = 0


@dataclass
class BinComparison:
    """Per-bin comparison of two sets of conditional samples."""

    centers: np.ndarray
    counts_a: np.ndarray
    counts_b: np.ndarray
    w1: np.ndarray
    tv: np.ndarray
    radius: np.ndarray
    pointwise_radius: np.ndarray

    @property
    def passed(self) -> np.ndarray:
        return self.w1 <= self.radius

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passed))


def _tv(za: np.ndarray, zb: np.ndarray, edges: np.ndarray) -> float:
    ha = np.histogram(za, edges)[0] / za.size
    hb = np.histogram(zb, edges)[0] / zb.size
    return 0.5 * float(np.abs(ha - hb).sum())


def compare_bins(groups_a: list[np.ndarray], groups_b: list[np.ndarray], centers: np.ndarray,
                 z_edges: np.ndarray, n_boot: int, level: float, seed: int) -> BinComparison:
    """W1 per bin with simultaneous bootstrap radii under the pooled null.

    Each replicate resamples both groups of every bin from their pooled
    samples.  The radius of bin ``k`` is ``q * s_k`` where ``s_k`` is the
    bootstrap standard deviation of that bin's statistic and ``q`` the
    ``level`` quantile of the replicate-wise maximum of the standardised
    statistics, so that all bins are covered jointly at ``level``.
    """
    K = len(groups_a)
    gen = rng.generator(seed, rng.BOOTSTRAP)
    obs = np.array([w1_samples(a, b) for a, b in zip(groups_a, groups_b)])
    tv = np.array([_tv(a, b, z_edges) for a, b in zip(groups_a, groups_b)])
    boot = np.empty((n_boot, K))
    for k, (a, b) in enumerate(zip(groups_a, groups_b)):
        pool = np.concatenate([a, b])
        na, nb = a.size, b.size
        for i in range(n_boot):
            ia = gen.integers(0, pool.size, na)
            ib = gen.integers(0, pool.size, nb)
            boot[i, k] = w1_samples(pool[ia], pool[ib])
    scale = boot.std(axis=0, ddof=1)
    scale = np.where(scale > 0, scale, np.max(boot, axis=0) + 1e-300)
    centre = boot.mean(axis=0)
    T = np.max((boot - centre) / scale, axis=1)
    q = float(np.quantile(T, level))
    radius = centre + q * scale
    pointwise = np.quantile(boot, level, axis=0)
    return BinComparison(
        np.asarray(centers, dtype=np.float64),
        np.array([a.size for a in groups_a]),
        np.array([b.size for b in groups_b]),
        obs,
        tv,
        radius,
        pointwise,
    )


@dataclass
class MarkovTestReport:
    s: float
    r: float
    t: float
    bins: BinComparison
    central: np.ndarray
    setup_w1: float
    bin_width: float
    dropped_mass_a: float
    two_point: BinComparison | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return self.bins.all_pass

    def central_fail_fraction(self) -> float:
        c = self.central
        if not c.any():
            return 0.0
        return float(np.mean(~self.bins.passed[c]))

    def summary(self) -> dict[str, Any]:
        b = self.bins
        out = {
            "test": "nonlinear-markov",
            "s": self.s,
            "r": self.r,
            "t": self.t,
            "bin_width": self.bin_width,
            "retained_bins": int(b.w1.size),
            "failed_bins": int(np.sum(~b.passed)),
            "central_bins": int(self.central.sum()),
            "central_fail_fraction": self.central_fail_fraction(),
            "setup_w1": self.setup_w1,
            "dropped_mass": self.dropped_mass_a,
            "max_w1_over_radius": float(np.max(b.w1 / b.radius)),
        }
        if self.two_point is not None:
            out["two_point_failed_bins"] = int(np.sum(~self.two_point.passed))
            out["two_point_verdict"] = "pass" if self.two_point.all_pass else "fail"
        out.update(self.meta)
        out["verdict"] = "pass" if self.verdict else "fail"
        return out

    def rows(self) -> list[dict[str, Any]]:
        b = self.bins
        return [
            {
                "y": float(b.centers[k]),
                "count_a": int(b.counts_a[k]),
                "count_b": int(b.counts_b[k]),
                "w1": float(b.w1[k]),
                "tv": float(b.tv[k]),
                "radius": float(b.radius[k]),
                "central": int(self.central[k]),
                "pass": int(b.passed[k]),
            }
            for k in range(b.w1.size)
        ]


def _pde_marginal(c: CoefficientSet, zeta, s: float, r: float, t: float, n_cells: int) -> GridDensity:
    datum = as_datum(zeta)
    grid = auto_grid(c, datum, s, t, n_cells)
    u0 = datum.to_density(grid, s)
    if r == s:
        return u0
    return solve_nlfpke(c, u0, s, [s, r]).densities[-1]


def test_nonlinear_markov(c: CoefficientSet, s: float, zeta, r: float, t: float,
                          config: MarkovConfig | None = None) -> MarkovTestReport:
    """Compare the conditional law of ``X_t`` given ``X_r`` in two runs.

    Run A simulates from ``(s, zeta)``; Run B restarts at ``(r, mu_r)`` with a
    fresh seed.  A bin passes when the W1 distance of its two conditional
    samples lies within the simultaneous bootstrap radius.  Raises
    :class:`SetupError` if Run B's start differs from Run A's marginal at
    ``r`` by more than ``setup_tol`` in W1.
    """
    cfg = config or MarkovConfig()
    if not s <= r <= t:
        raise InvariantError("need s <= r <= t")
    r_prime = cfg.r_prime if cfg.r_prime is not None else s + 0.5 * (r - s)
    times_a = sorted({s, r_prime, r, t}) if cfg.two_point and s < r_prime < r else sorted({s, r, t})
    if cfg.run_a is not None:
        run_a = cfg.run_a
        if not all(np.any(np.abs(run_a.times - x) < 1e-12) for x in (s, r, t)):
            raise SetupError("supplied Run A lacks one of the times s, r, t")
    else:
        run_a = simulate_ddsde(c, zeta, s, times_a, cfg.N, cfg.dt, cfg.kde, cfg.seed_a)
    if cfg.start_override is not None:
        start = cfg.start_override
    elif cfg.start == "pde":
        start = _pde_marginal(c, zeta, s, r, t, cfg.n_cells)
    elif cfg.start == "particles":
        start = estimate_density(run_a.ensemble_at(r), cfg.kde) if r > s else zeta
    else:
        raise InvariantError(f"unknown start {cfg.start!r}")
    run_b = simulate_ddsde(c, start, r, sorted({r, t}), cfg.N, cfg.dt, cfg.kde, cfg.seed_b)
    xa_r, xb_r = run_a.at(r), run_b.at(r)
    setup = w1_samples(xa_r, xb_r)
    if cfg.check_setup and setup > cfg.setup_tol:
        raise SetupError(f"Run B starts {setup:.4f} (W1) away from Run A at r; tolerance {cfg.setup_tol}")

    width = _resolve_width(xa_r, cfg.bins)
    y_edges = cfg.bins.edges_for(np.concatenate([xa_r, xb_r]), width)
    xa_t, xb_t = run_a.at(t), run_b.at(t)
    z_edges = cfg.bins.edges_for(np.concatenate([xa_t, xb_t]), width)
    ia, ib = _bin_index(xa_r, y_edges), _bin_index(xb_r, y_edges)
    nb = len(y_edges) - 1
    ca = np.bincount(ia, minlength=nb)
    cb = np.bincount(ib, minlength=nb)
    keep = np.flatnonzero((ca >= cfg.bins.min_count) & (cb >= cfg.bins.min_count))
    if keep.size == 0:
        raise SetupError("no bin holds enough samples in both runs")
    order_a = np.argsort(ia, kind="stable")
    order_b = np.argsort(ib, kind="stable")
    starts_a = np.concatenate([[0], np.cumsum(ca)])
    starts_b = np.concatenate([[0], np.cumsum(cb)])
    ga = [xa_t[order_a[starts_a[j]:starts_a[j + 1]]] for j in keep]
    gb = [xb_t[order_b[starts_b[j]:starts_b[j + 1]]] for j in keep]
    centers = 0.5 * (y_edges[:-1] + y_edges[1:])[keep]
    cmp = compare_bins(ga, gb, centers, z_edges, cfg.n_boot, cfg.level, cfg.boot_seed)
    q25, q75 = np.percentile(xa_r, [25, 75])
    central = (centers >= q25) & (centers <= q75)

    two = None
    if cfg.two_point and s < r_prime < r and np.any(np.abs(run_a.times - r_prime) < 1e-12):
        two = _two_point(run_a, r_prime, r, t, y_edges, keep, z_edges, cfg)
    dropped = 1.0 - ca[keep].sum() / xa_r.size
    meta = {"N": run_a.N, "dt": cfg.dt, "seed_a": run_a.seed, "seed_b": cfg.seed_b, "start": cfg.start
            if cfg.start_override is None else "override", "r_prime": r_prime}
    return MarkovTestReport(s, r, t, cmp, central, setup, width, float(dropped), two, meta)


test_nonlinear_markov.__test__ = False


def _two_point(run_a: PathStore, r_prime: float, r: float, t: float, y_edges, keep, z_edges,
               cfg: MarkovConfig) -> BinComparison | None:
    """Within each ``r``-bin split Run A by ``X_{r'}`` at its bin median and compare the halves."""
    xr, xp, xt = run_a.at(r), run_a.at(r_prime), run_a.at(t)
    idx = _bin_index(xr, y_edges)
    lows, highs, centers = [], [], []
    for j in keep:
        sel = np.flatnonzero(idx == j)
        if sel.size < 2 * cfg.bins.min_count:
            continue
        med = np.median(xp[sel])
        lo = sel[xp[sel] <= med]
        hi = sel[xp[sel] > med]
        if lo.size < cfg.bins.min_count or hi.size < cfg.bins.min_count:
            continue
        lows.append(xt[lo])
        highs.append(xt[hi])
        centers.append(0.5 * (y_edges[j] + y_edges[j + 1]))
    if not lows:
        return None
    return compare_bins(lows, highs, np.array(centers), z_edges, cfg.n_boot, cfg.level, cfg.boot_seed + 1)


def wrong_marginal_control(s: float, r: float) -> Gaussian:
    """Heat-flow marginal at ``r`` from ``delta_0`` at ``s`` (variance ``2 (r - s)``)."""
    return Gaussian(0.0, 2.0 * (r - s))


# -- point-start comparison -------------------------------------------------------------


def compare_with_point_starts(kernel: ConditionalKernel, paths: PathStore, c: CoefficientSet,
                              n_cells: int = 1024) -> np.ndarray:
    """W1 between each conditional row and the law at ``t`` started from the bin centre at ``r``.

    For a linear operator the two agree up to bin width; for nonlinear ones the
    gap measures how far the conditional law is from a point-start solution.
    """
    xt = paths.at(kernel.t)
    out = np.empty(kernel.retained.size)
    tau = kernel.t - kernel.r
    for k, y in enumerate(kernel.y_centers):
        grid = auto_grid(c, Dirac(float(y)), kernel.r, kernel.t, n_cells)
        if tau > 0:
            u = solve_nlfpke(c, GridDensity.dirac(grid, float(y), kernel.r), kernel.r,
                             [kernel.r, kernel.t]).densities[-1]
            out[k] = w1_samples_grid(xt[kernel.members[k]], u)
        else:
            out[k] = float(np.mean(np.abs(xt[kernel.members[k]] - y)))
    return out


# -- fdd reconstruction ---------------------------------------------------------------


@dataclass
class FddResult:
    value: float
    dropped_mass: float


def _initial_weights(mu_t0, k0: ConditionalKernel) -> np.ndarray:
    edges = k0.y_edges
    if isinstance(mu_t0, GridDensity):
        mass = np.diff(mu_t0.cdf(edges)) / mu_t0.mass
    else:
        x = _positions(mu_t0)
        if x is None:
            raise InvariantError("mu_t0 must be a grid density or an ensemble")
        mass = np.bincount(_bin_index(x, edges), minlength=len(edges) - 1) / x.size
    return mass[k0.retained]


def reconstruct_fdd(kernels: list[ConditionalKernel], mu_t0, f: Callable, times=None,
                    return_details: bool = False):
    """``E f(X_{t0}, ..., X_{tn})`` from the initial marginal and a chain of kernels.

    Bins that a kernel does not retain carry no row; the mass sent into them is
    dropped and the joint law renormalised (the dropped fraction is reported
    with ``return_details=True``).  ``f`` is called with one broadcastable
    array of bin centres per time.
    """
    if not kernels:
        if isinstance(mu_t0, GridDensity):
            val = float(np.sum(f(mu_t0.centers) * mu_t0.values) * mu_t0.h / mu_t0.mass)
        else:
            val = float(np.mean(f(_positions(mu_t0))))
        res = FddResult(val, 0.0)
        return res if return_details else res.value
    for a, b in zip(kernels[:-1], kernels[1:]):
        if abs(a.t - b.r) > 1e-12:
            raise InvariantError(f"kernels do not chain: t = {a.t} then r = {b.r}")
    if times is not None:
        expect = [kernels[0].r] + [k.t for k in kernels]
        if len(times) != len(expect) or np.any(np.abs(np.asarray(times) - expect) > 1e-12):
            raise InvariantError("times do not match the kernel chain")
    w0 = _initial_weights(mu_t0, kernels[0])
    total0 = w0.sum()
    if total0 <= 0:
        raise InvariantError("initial marginal has no mass in retained bins")
    dropped = 1.0 - total0
    P = w0 / total0
    axes = [kernels[0].y_centers]
    for i, k in enumerate(kernels):
        if i == 0:
            R = k.rows
        else:
            prev = kernels[i - 1]
            zc = prev.z_centers
            j = np.searchsorted(k.y_edges, zc, side="right") - 1
            rowmap = -np.ones(zc.size, dtype=np.int64)
            pos = {int(b): n for n, b in enumerate(k.retained)}
            for q, jj in enumerate(j):
                if 0 <= jj < len(k.y_edges) - 1 and int(jj) in pos:
                    rowmap[q] = pos[int(jj)]
            R = np.zeros((zc.size, k.z_edges.size - 1))
            ok = rowmap >= 0
            R[ok] = k.rows[rowmap[ok]]
        P = P[..., None] * R
        s = P.sum()
        if s <= 0:
            raise InvariantError("kernel chain lost all mass")
        dropped += (1.0 - dropped) * (1.0 - s)
        P = P / s
        axes.append(k.z_centers)
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    val = float(np.sum(P * f(*grids)))
    res = FddResult(val, max(float(dropped), 0.0))
    return res if return_details else res.value


def restarted_kernel(c: CoefficientSet, s: float, zeta, r: float, t: float, N: int, dt: float,
                     kde: KdeSpec | None = None, seed: int = 2, bins: BinSpec | None = None,
                     n_cells: int = 1024) -> ConditionalKernel:
    """Kernel ``p_{r,t}`` estimated from an independent run restarted at ``(r, mu_r)``.

    ``mu_r`` is the grid solution of the nonlinear equation.  All bins are
    kept by default so the reconstruction drops no tail mass.
    """
    start = _pde_marginal(c, zeta, s, r, t, n_cells)
    run_b = simulate_ddsde(c, start, r, [r, t], N, dt, kde, seed)
    return estimate_conditional_kernel(run_b, r, t, bins or BinSpec(min_count=1))


def direct_expectation(paths: PathStore, f: Callable, times) -> tuple[float, float]:
    """Path-ensemble mean of ``f(X_{t0}, ..., X_{tn})`` and its standard error."""
    vals = np.asarray(f(*[paths.at(t) for t in times]), dtype=np.float64)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def fdd_standard_error(kernels: list[ConditionalKernel], mu_t0, f: Callable, n_paths: int) -> float:
    """Monte Carlo standard error of the reconstruction (variance of ``f`` under it over ``N``)."""
    m1 = reconstruct_fdd(kernels, mu_t0, f)
    m2 = reconstruct_fdd(kernels, mu_t0, lambda *a: np.asarray(f(*a)) ** 2)
    return math.sqrt(max(m2 - m1 * m1, 0.0) / n_paths)


# -- Chapman-Kolmogorov ---------------------------------------------------------------


@dataclass
class CkReport:
    m: float
    residual: float
    lhs: GridDensity
    rhs: GridDensity
    n_probes: int
    self_estimate: float
    small_tol: float
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def small(self) -> bool:
        return self.residual <= self.small_tol

    @property
    def holds(self) -> bool:
        return self.small

    def verdict_line(self) -> str:
        size = "small" if self.small else "large"
        kind = "linear" if self.m == 1 else "nonlinear"
        verdict = "holds" if self.small else "violated"
        return f"CK-residual: {size}; verdict: {verdict} ({kind})"

    def summary(self) -> dict[str, Any]:
        out = {
            "test": "chapman-kolmogorov",
            "m": self.m,
            "residual": self.residual,
            "probes": self.n_probes,
            "probe_self_estimate": self.self_estimate,
            "small_tol": self.small_tol,
        }
        out.update(self.meta)
        out["verdict"] = "holds" if self.small else "violated"
        return out


@dataclass
class ProbeSpec:
    """Probe starting points: every ``stride``-th cell carrying mass above ``mass_floor``.

    ``coarse_tol`` bounds the W1 change when every other probe is dropped
    (weights merged into the kept neighbour); larger changes mean the probe
    set is too coarse.
    """

    stride: int = 1
    mass_floor: float = 1e-12
    coarse_tol: float = 0.05


def _probe_mixture(sol: np.ndarray, idx: np.ndarray, cell_mass: np.ndarray, step: int) -> np.ndarray:
    """Mixture of probe solutions where each kept probe takes the mass of its stripe."""
    keep = np.arange(0, idx.size, step)
    # each cell in a stripe goes to the nearest kept probe (ties to the left)
    owner = np.searchsorted(idx[keep], np.arange(cell_mass.size), side="left")
    owner = np.clip(owner, 0, keep.size - 1)
    left = np.clip(owner - 1, 0, keep.size - 1)
    dl = np.abs(np.arange(cell_mass.size) - idx[keep][left])
    dr = np.abs(np.arange(cell_mass.size) - idx[keep][owner])
    owner = np.where(dl <= dr, left, owner)
    w = np.bincount(owner, weights=cell_mass, minlength=keep.size)
    return (w[:, None] * sol[keep]).sum(axis=0)


def test_ck_violation(m: float, s: float, x0: float, r: float, t: float, grid: Grid | None = None,
                      probes: ProbeSpec | None = None, n_cells: int = 512,
                      small_tol: float = 1e-2) -> CkReport:
    """L1 gap between ``mu^{s,x0}_t`` and ``int mu^{r,y}_t mu^{s,x0}_r(dy)`` for PME(m).

    Dirac starts are single-cell densities; the ``y``-integral runs over
    probe cells (all cells with mass by default) solved together.
    """
    if not s <= r <= t:
        raise InvariantError("need s <= r <= t")
    if m < 1:
        raise InvariantError("need m >= 1")
    probes = probes or ProbeSpec()
    c = registry_lookup("heat") if m == 1 else registry_lookup("pme", m=m)
    if grid is None:
        # the heat grid is wider than the porous-media one; share it so both m compare
        grid = auto_grid(registry_lookup("heat"), Dirac(x0), s, t, n_cells)
    u0 = GridDensity.dirac(grid, x0, s)
    times = sorted({s, r, t})
    flow = solve_nlfpke(c, u0, s, times)
    lhs = flow.densities[-1]
    mu_r = flow.densities[flow.index_of(r)]
    cell_mass = mu_r.values * grid.h
    idx = np.flatnonzero(cell_mass > probes.mass_floor)
    idx = idx[:: probes.stride]
    rows = np.zeros((idx.size, grid.n_cells))
    rows[np.arange(idx.size), idx] = 1.0 / grid.h
    sol = solve_nlfpke_batch(c, rows, grid, r, t, weights=cell_mass[idx]) if t > r else rows
    rhs_vals = _probe_mixture(sol, idx, cell_mass, 1)
    coarse = _probe_mixture(sol, idx, cell_mass, 2) if idx.size > 1 else rhs_vals
    rhs = GridDensity(grid, rhs_vals, t)
    self_est = w1_grid(rhs, rhs.with_values(coarse))
    if self_est > probes.coarse_tol:
        raise SetupError(f"probe set too coarse: halving it moves the mixture by {self_est:.3e} in W1")
    residual = float(np.abs(lhs.values - rhs.values).sum() * grid.h)
    meta = {
        "s": s,
        "r": r,
        "t": t,
        "x0": x0,
        "n_cells": grid.n_cells,
        "x_min": grid.x_min,
        "x_max": grid.x_max,
        "burn_in_ok": bool(t == r or t - r >= T_BURN),
    }
    return CkReport(float(m), residual, lhs, rhs, int(idx.size), self_est, small_tol, meta)


test_ck_violation.__test__ = False
