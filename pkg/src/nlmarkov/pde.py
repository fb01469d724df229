"""Explicit conservative finite-volume solvers for the nonlinear FPKE and its linearisation.

The equation solved on a 1-D grid with no-flux walls is

    u_t = (A)_xx - (V u)_x

where, for the nonlinear equation with Nemytskii coefficients, ``A = beta(u)``
and ``V u = D(x) b0(u) u``; for the linearised equation along a frozen curve
``ubar`` the same terms read ``A = beta(ubar)/ubar * v`` and
``V v = D(x) b0(ubar) v``.  Mean-field sets use ``A = sigma^2/2 u`` and the
constant velocity ``int h du``.

Fluxes live on cell faces: a central difference of ``A`` for diffusion and
first-order upwinding on the sign of ``D`` for transport.  Mass changes only by
flux differences, so the discrete mass is conserved up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, Kind
from .errors import DomainEscapeError, GridMismatchError, InvariantError, RangeError, StiffnessError
from .grid import Grid, GridDensity, MarginalFlow
from .oracles import BarenblattExponents, barenblatt_normalization

DIFFUSION_CFL = 0.4
TRANSPORT_CFL = 0.9
ESCAPE_CELLS = 10
ESCAPE_MASS = 1e-6
MAX_SUBSTEPS = 20_000_000
T_BURN = 0.05


@dataclass
class SolverOptions:
    diffusion_cfl: float = DIFFUSION_CFL
    transport_cfl: float = TRANSPORT_CFL
    max_substeps: int = MAX_SUBSTEPS
    check_escape: bool = True
    escape_mass: float = ESCAPE_MASS


@dataclass
class _Stats:
    substeps: list[int] = field(default_factory=list)
    clipped_mass: float = 0.0
    min_before_clip: float = 0.0


# -- domain sizing ------------------------------------------------------------


def auto_grid(c: CoefficientSet, datum, s: float, t_final: float, n_cells: int) -> Grid:
    """Grid wide enough that no mass reaches the walls by ``t_final``.

    Porous media (``m > 1``): total width of 8 Barenblatt support radii at the
    equivalent Barenblatt time ``tau0 + (t - s)``, where ``tau0`` matches the
    variance of the initial datum.  Otherwise: total width of 12 standard
    deviations of the final spread, widened by the largest drift displacement.
    """
    mean, var = datum.mean, datum.var
    tau = max(t_final - s, 0.0)
    if c.kind is Kind.NEMYTSKII and c.m is not None and c.m > 1 and _pure_pme(c):
        m = c.m
        ex = BarenblattExponents.of(m, 1)
        C = barenblatt_normalization(m, 1)
        p = 1.0 / (m - 1)
        # Barenblatt variance is R^2 / (2p + 3) with R^2 = (C/k) tau^(2 beta)
        tau0 = (var * (2 * p + 3) * ex.k / C) ** (1 / (2 * ex.beta)) if var > 0 else 0.0
        R = math.sqrt(C / ex.k) * (tau0 + tau) ** ex.beta
        half = 4.0 * R
        return Grid(mean - half, mean + half, n_cells)
    if c.kind is Kind.MEAN_FIELD:
        sd = math.sqrt(var + c.sigma**2 * tau)
        hmax = float(np.max(np.abs(c.h(np.linspace(-50, 50, 20001)))))
        shift = hmax * tau
        half = max(6.0 * sd, 1e-3)
        return Grid(mean - half - shift, mean + half + shift, n_cells)
    sd = math.sqrt(var + 2 * tau)
    sup = datum.sup if math.isfinite(datum.sup) else 1.0
    speed = float(np.max(np.abs(c.b0(np.linspace(0.0, max(sup, 1e-12), 101))))) * float(
        np.max(np.abs(c.D(np.linspace(mean - 10 * (sd + 1), mean + 10 * (sd + 1), 2001))))
    )
    shift = speed * tau
    half = 6.0 * sd
    return Grid(mean - half - (shift if speed else 0.0), mean + half + shift, n_cells)


def _pure_pme(c: CoefficientSet) -> bool:
    from .coefficients import ConstFn, PowerBeta

    return isinstance(c.beta, PowerBeta) and isinstance(c.b0, ConstFn) and c.b0.value == 0


# -- one explicit step ------------------------------------------------------------


def _faces_velocity(c: CoefficientSet, grid: Grid) -> np.ndarray:
    xf = grid.edges[1:-1]
    if c.kind is Kind.MEAN_FIELD:
        return np.ones_like(xf)
    return np.asarray(c.D(xf), dtype=np.float64) * np.ones_like(xf)


def _step(u, P, G, Dface, dt, h):
    """Advance ``u`` (shape ``(..., n)``) by one explicit step.

    ``P`` is the diffused quantity per cell, ``G`` the transported flux density
    per cell (multiplied by the face velocity ``Dface`` after upwinding).
    """
    F = -(P[..., 1:] - P[..., :-1]) / h
    if Dface is not None:
        up = np.where(Dface >= 0, Dface * G[..., :-1], Dface * G[..., 1:])
        F = F + up
    div = np.empty_like(u)
    div[..., 0] = F[..., 0]
    div[..., 1:-1] = F[..., 1:] - F[..., :-1]
    div[..., -1] = -F[..., -1]
    return u - (dt / h) * div


def _clip(u, stats: _Stats):
    neg = u < 0
    if neg.any():
        stats.min_before_clip = min(stats.min_before_clip, float(u[neg].min()))
        stats.clipped_mass += float(-u[neg].sum())
        u = np.where(neg, 0.0, u)
    return u


def _check_escape(u, h, opts: SolverOptions, t: float):
    if not opts.check_escape:
        return
    n = min(ESCAPE_CELLS, u.shape[-1] // 2)
    edge = h * (u[..., :n].sum(axis=-1) + u[..., -n:].sum(axis=-1))
    if np.max(edge) > opts.escape_mass:
        raise DomainEscapeError(
            f"mass {np.max(edge):.3e} within {n} cells of the boundary at t = {t:g}; enlarge the domain"
        )


def _check_times(s: float, times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or len(times) == 0:
        raise InvariantError("times must be a non-empty 1-D sequence")
    if times[0] != s:
        raise InvariantError(f"times[0] = {times[0]} must equal s = {s}")
    if np.any(np.diff(times) <= 0):
        raise InvariantError("times must be strictly increasing")
    return times


def _evolve(u0, t0: float, t1: float, h: float, terms, opts: SolverOptions, stats: _Stats):
    """Sub-step from ``t0`` to ``t1``; ``terms(u, t)`` returns ``(P, G, Dface, rate)``.

    ``rate`` bounds the diffusion and transport speeds so that
    ``dt = min(cfl_d h^2 / (2 rate_d), cfl_t h / rate_t)``.  The step is
    recomputed from the current state every sub-step.
    """
    u = u0
    t = t0
    n = 0
    while t < t1:
        P, G, Dface, rate_d, rate_t = terms(u, t)
        dt = math.inf
        if rate_d > 0:
            dt = opts.diffusion_cfl * h * h / (2.0 * rate_d)
        if rate_t > 0:
            dt = min(dt, opts.transport_cfl * h / rate_t)
        if not math.isfinite(dt):
            # nothing moves
            break
        last = t + dt >= t1 - 1e-14 * max(1.0, abs(t1))
        if last:
            dt = t1 - t
        u = _clip(_step(u, P, G, Dface, dt, h), stats)
        t = t1 if last else t + dt
        n += 1
        if n > opts.max_substeps:
            raise StiffnessError(f"more than {opts.max_substeps} sub-steps in [{t0}, {t1}]")
    stats.substeps.append(n)
    return u


def _nonlinear_terms(c: CoefficientSet, grid: Grid):
    Dface = _faces_velocity(c, grid)
    h = grid.h
    if c.kind is Kind.MEAN_FIELD:
        a = 0.5 * c.sigma**2
        nodes, weights = np.polynomial.legendre.leggauss(4)
        xq = grid.centers[:, None] + 0.5 * h * nodes[None, :]
        hq = 0.5 * h * (c.h(xq) * weights[None, :]).sum(axis=1)

        def terms(u, t):
            v = (u * hq).sum(axis=-1)
            vel = np.asarray(v)[..., None] * Dface
            return a * u, u, vel, a, float(np.max(np.abs(v)))

        return terms

    has_transport = bool(np.any(Dface != 0))
    dmax = float(np.max(np.abs(Dface))) if has_transport else 0.0

    def terms(u, t):
        P = c.beta(u)
        rate_d = float(np.max(c.beta_prime(u)))
        if has_transport:
            G = c.b0(u) * u
            rate_t = dmax * float(np.max(c.flux_speed(u)))
            return P, G, Dface, rate_d, rate_t
        return P, None, None, rate_d, 0.0

    return terms


def solve_nlfpke(c: CoefficientSet, zeta: GridDensity, s: float, times,
                 options: SolverOptions | None = None) -> MarginalFlow:
    """Solve the nonlinear FPKE from ``(s, zeta)`` and return densities at ``times``.

    ``times[0]`` must equal ``s``.  Raises :class:`DomainEscapeError` when mass
    reaches the walls and :class:`StiffnessError` when the stability rule needs
    more sub-steps than allowed.
    """
    if c.dim != 1:
        raise InvariantError("grid PDE solving is one-dimensional only")
    opts = options or SolverOptions()
    times = _check_times(s, times)
    zeta.check()
    grid = zeta.grid
    terms = _nonlinear_terms(c, grid)
    stats = _Stats()
    u = zeta.values.copy()
    out = [GridDensity(grid, u.copy(), float(times[0]))]
    for t0, t1 in zip(times[:-1], times[1:]):
        u = _evolve(u, float(t0), float(t1), grid.h, terms, opts, stats)
        _check_escape(u, grid.h, opts, float(t1))
        out.append(GridDensity(grid, u.copy(), float(t1)))
    meta = _meta("nonlinear", c, grid, stats, opts)
    return MarginalFlow(float(s), times, out, meta)


def solve_nlfpke_batch(c: CoefficientSet, zetas: np.ndarray, grid: Grid, s: float, t: float,
                       options: SolverOptions | None = None, weights=None) -> np.ndarray:
    """Evolve several initial densities (rows of ``zetas``) together from ``s`` to ``t``.

    Rows share the sub-step sequence (the most restrictive row sets ``dt``), so
    each row is as accurate as a single solve.  Returns the final values.
    With ``weights`` the escape check applies to the weighted mixture of rows
    instead of to every row.
    """
    opts = options or SolverOptions()
    terms = _nonlinear_terms(c, grid)
    stats = _Stats()
    u = np.array(zetas, dtype=np.float64)
    if t > s:
        u = _evolve(u, float(s), float(t), grid.h, terms, opts, stats)
        mix = u if weights is None else np.asarray(weights) @ u
        _check_escape(mix, grid.h, opts, float(t))
    return u


def solve_linearized_fpke(c: CoefficientSet, frozen: MarginalFlow, eta: GridDensity, s: float,
                          times, options: SolverOptions | None = None) -> MarginalFlow:
    """Solve the linear FPKE whose coefficients are evaluated on the frozen curve.

    The frozen density at intermediate times is linearly interpolated between
    the stored densities.
    """
    opts = options or SolverOptions()
    times = _check_times(s, times)
    if frozen.times[0] > s + 1e-12 or frozen.times[-1] < times[-1] - 1e-12:
        raise RangeError(
            f"frozen flow covers [{frozen.times[0]}, {frozen.times[-1]}], need [{s}, {times[-1]}]"
        )
    if not eta.grid.same_as(frozen.grid):
        raise GridMismatchError("eta and the frozen flow must share a grid")
    eta.check()
    grid = eta.grid
    h = grid.h
    Dface = _faces_velocity(c, grid)

    if c.kind is Kind.MEAN_FIELD:
        a = 0.5 * c.sigma**2
        nodes, weights = np.polynomial.legendre.leggauss(4)
        xq = grid.centers[:, None] + 0.5 * h * nodes[None, :]
        hq = 0.5 * h * (c.h(xq) * weights[None, :]).sum(axis=1)

        def terms(v, t):
            vel = float((frozen.at(t).values * hq).sum())
            return a * v, v, vel * Dface, a, abs(vel)
    else:
        has_transport = bool(np.any(Dface != 0))
        dmax = float(np.max(np.abs(Dface))) if has_transport else 0.0

        def terms(v, t):
            ub = frozen.at(t).values
            a = c.diffusivity(ub)
            rate_d = float(np.max(a))
            if has_transport:
                b = c.b0(ub)
                return a * v, b * v, Dface, rate_d, dmax * float(np.max(np.abs(b)))
            return a * v, None, None, rate_d, 0.0

    stats = _Stats()
    v = eta.values.copy()
    out = [GridDensity(grid, v.copy(), float(times[0]))]
    for t0, t1 in zip(times[:-1], times[1:]):
        v = _evolve(v, float(t0), float(t1), h, terms, opts, stats)
        _check_escape(v, h, opts, float(t1))
        out.append(GridDensity(grid, v.copy(), float(t1)))
    meta = _meta("linearized", c, grid, stats, opts)
    return MarginalFlow(float(s), times, out, meta)


def _meta(kind: str, c: CoefficientSet, grid: Grid, stats: _Stats, opts: SolverOptions) -> dict:
    return {
        "scheme": f"explicit-fv-upwind/{kind}",
        "coefficients": c.name,
        "x_min": grid.x_min,
        "x_max": grid.x_max,
        "n_cells": grid.n_cells,
        "substeps": list(stats.substeps),
        "clipped_mass": stats.clipped_mass,
        "min_before_clip": stats.min_before_clip,
        "diffusion_cfl": opts.diffusion_cfl,
        "transport_cfl": opts.transport_cfl,
    }


# -- domination ---------------------------------------------------------------------


@dataclass
class DominationReport:
    """Smallest ``C`` with ``nu_t <= C mu_t`` on all checked times (inf if none)."""

    C_star: float
    times: np.ndarray
    ratios: np.ndarray

    def table(self) -> list[tuple[float, float]]:
        return [(float(t), float(r)) for t, r in zip(self.times, self.ratios)]


def check_domination(nu: MarginalFlow, mu: MarginalFlow, floor: float = 1e-12,
                     mass_floor: float = 1e-10) -> DominationReport:
    """Per-time supremum of ``nu / mu`` over cells where ``mu > floor``.

    If ``nu`` carries more than ``mass_floor`` of mass where ``mu <= floor`` the
    ratio at that time is infinite.
    """
    if len(nu.times) != len(mu.times) or np.any(np.abs(nu.times - mu.times) > 1e-12):
        raise GridMismatchError("time grids differ")
    if not nu.grid.same_as(mu.grid):
        raise GridMismatchError("spatial grids differ")
    h = nu.grid.h
    ratios = np.empty(len(nu.times))
    for i, (a, b) in enumerate(zip(nu.densities, mu.densities)):
        sel = b.values > floor
        outside = h * a.values[~sel].sum()
        if outside > mass_floor:
            ratios[i] = math.inf
        elif sel.any():
            ratios[i] = float(np.max(a.values[sel] / b.values[sel]))
        else:
            ratios[i] = math.inf
    return DominationReport(float(np.max(ratios)), nu.times.copy(), ratios)


def perturb_initial(zeta: GridDensity, g_min: float = 0.5, g_max: float = 2.0,
                    shape: str = "tilt", seed: int = 0) -> tuple[GridDensity, np.ndarray]:
    """Unit-mass perturbation ``eta = g zeta`` with ``g_min <= g <= g_max``.

    ``g = 1 + eps (psi - <psi, zeta>)`` for a bounded profile ``psi``; ``eps`` is
    the largest value keeping ``g`` inside the bounds, so ``eta <= g_max zeta``
    and ``eta >= g_min zeta`` hold by construction.  Returns ``(eta, g)``.
    """
    if not (0 < g_min <= 1 <= g_max):
        raise InvariantError("need 0 < g_min <= 1 <= g_max")
    x = zeta.centers
    mu, sd = zeta.mean(), math.sqrt(max(zeta.variance(), 1e-300))
    if shape == "tilt":
        psi = np.tanh((x - mu) / sd)
    elif shape == "bump":
        psi = np.exp(-0.5 * ((x - mu) / (0.5 * sd)) ** 2)
    elif shape == "random":
        from . import rng as _rng

        gen = _rng.generator(seed, _rng.RESAMPLE)
        k = np.arange(1, 6)
        amp = gen.standard_normal(5) / k
        ph = gen.uniform(0, 2 * np.pi, 5)
        psi = np.sum(amp[:, None] * np.cos(k[:, None] * (x - mu)[None, :] / sd + ph[:, None]), axis=0)
    else:
        raise InvariantError(f"unknown perturbation shape {shape!r}")
    w = zeta.values * zeta.h
    dev = psi - float(np.sum(psi * w))
    sel = zeta.values > 0
    hi = dev[sel].max() if sel.any() else 0.0
    lo = dev[sel].min() if sel.any() else 0.0
    eps = math.inf
    if hi > 0:
        eps = min(eps, (g_max - 1) / hi)
    if lo < 0:
        eps = min(eps, (g_min - 1) / lo)
    if not math.isfinite(eps):
        eps = 0.0
    g = 1.0 + eps * dev
    # off the support g is irrelevant to eta; keep it inside the bounds anyway
    g = np.where(sel, g, np.clip(g, g_min, g_max))
    eta = zeta.with_values(g * zeta.values)
    return eta, g
