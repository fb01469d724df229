"""Interacting-particle simulation of the distribution-dependent SDE.

At every sub-step the density of the live ensemble is re-estimated by a
kernel density estimate on a fixed grid, the Nemytskii coefficients are read
off that estimate at each particle, and all particles advance by one
Euler-Maruyama step.  Brownian increments come from counter-based streams
addressed by ``(seed, step, particle index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import rng
from .coefficients import CoefficientSet, Kind
from .errors import DegenerateBandwidthError, DomainError, DomainEscapeError, InvariantError, NumericError, RangeError
from .grid import Grid, GridDensity, MarginalFlow
from .initial import as_datum, inverse_cdf

K0_BOOTSTRAP = 10
DEFAULT_KDE_CELLS = 2048


@dataclass
class ParticleEnsemble:
    """``N`` equally weighted particles at one time."""

    positions: np.ndarray
    time_label: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1)
        if self.positions.size < 1:
            raise InvariantError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(self.positions)):
            raise InvariantError("ensemble positions must be finite")

    @property
    def N(self) -> int:
        return self.positions.size


@dataclass
class KdeSpec:
    """Kernel density estimate settings.

    ``bandwidth`` is ``"silverman"`` or a positive number.  For the
    Epanechnikov kernel the bandwidth is the kernel standard deviation (support
    radius ``sqrt(5) * bandwidth``).  ``kernel="histogram"`` bins particles
    without smoothing (diagnostics only).  ``grid`` fixes the evaluation grid;
    otherwise one is built around the particles with ``n_cells`` cells.
    """

    kernel: str = "gaussian"
    bandwidth: Any = "silverman"
    grid: Grid | None = None
    n_cells: int = DEFAULT_KDE_CELLS

    def __post_init__(self):
        if self.kernel not in ("gaussian", "epanechnikov", "histogram"):
            raise InvariantError(f"unknown kernel {self.kernel!r}")
        if self.bandwidth != "silverman":
            if not float(self.bandwidth) > 0:
                raise InvariantError("bandwidth must be positive")

    def describe(self) -> str:
        return f"{self.kernel}/{self.bandwidth}"


def silverman_bandwidth(x: np.ndarray) -> float:
    """``0.9 min(std, IQR/1.34) N^(-1/5)``."""
    n = x.size
    if n < 2:
        raise DegenerateBandwidthError("silverman rule needs at least two particles")
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    bw = 0.9 * spread * n ** (-0.2)
    if not bw > 0:
        raise DegenerateBandwidthError("particles are coincident; supply a fixed bandwidth")
    return bw


def _kernel_weights(kernel: str, bw: float, h: float) -> np.ndarray:
    if kernel == "histogram":
        return np.ones(1)
    if kernel == "gaussian":
        half = int(math.ceil(5.0 * bw / h))
        j = np.arange(-half, half + 1) * h
        w = np.exp(-0.5 * (j / bw) ** 2)
    else:
        radius = math.sqrt(5.0) * bw
        half = int(math.ceil(radius / h))
        j = np.arange(-half, half + 1) * h
        w = np.maximum(1.0 - (j / radius) ** 2, 0.0)
    total = w.sum()
    if total <= 0:
        return np.ones(1)
    return w / total


def _linear_binning(x: np.ndarray, grid: Grid) -> np.ndarray:
    """Particle mass split between the two nearest cell centres."""
    n = grid.n_cells
    pos = (x - grid.x_min) / grid.h - 0.5
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    # indices clipped to the grid: a particle between a wall and the outer
    # centre gives all its mass to that centre
    w = np.bincount(np.clip(i0, 0, n - 1), weights=1.0 - frac, minlength=n)
    w += np.bincount(np.clip(i0 + 1, 0, n - 1), weights=frac, minlength=n)
    return w


def _auto_kde_grid(x: np.ndarray, bw: float, n_cells: int) -> Grid:
    lo, hi = float(x.min()), float(x.max())
    pad = 6.0 * bw
    return Grid(lo - pad, hi + pad, n_cells)


def kde_values(x: np.ndarray, grid: Grid, kernel: str, bw: float) -> np.ndarray:
    """Binned KDE on ``grid``; unit mass up to the fraction smoothed off the walls."""
    if np.any(x < grid.x_min) or np.any(x > grid.x_max):
        raise DomainError("particles outside the KDE evaluation grid")
    counts = _linear_binning(x, grid) / x.size
    w = _kernel_weights(kernel, bw, grid.h)
    if w.size > 1:
        if w.size >= 2 * grid.n_cells:
            raise DomainError("bandwidth too large for the KDE grid")
        # "same" mode would return the longer input's length when the kernel is wider than the grid
        half = w.size // 2
        dens = np.convolve(counts, w, mode="full")[half:half + grid.n_cells]
    else:
        dens = counts
    mass = dens.sum()
    return dens / (mass * grid.h)


def estimate_density(e: ParticleEnsemble, k: KdeSpec) -> GridDensity:
    """Kernel density estimate of the ensemble as a unit-mass grid density."""
    x = e.positions
    if k.bandwidth == "silverman":
        bw = silverman_bandwidth(x)
    else:
        bw = float(k.bandwidth)
    grid = k.grid if k.grid is not None else _auto_kde_grid(x, bw, k.n_cells)
    return GridDensity(grid, kde_values(x, grid, k.kernel, bw), e.time_label)


def resample_from_marginal(u: GridDensity, N: int, seed: int, time_label: float | None = None) -> ParticleEnsemble:
    """Draw ``N`` particles by inverse CDF from a grid density (deterministic per seed)."""
    if abs(u.mass - 1.0) > 1e-6:
        raise InvariantError(f"resampling needs a unit-mass density, got {u.mass}")
    x = inverse_cdf(u, rng.uniforms(seed, rng.RESAMPLE, 0, N))
    return ParticleEnsemble(x, u.time_label if time_label is None else time_label)


@dataclass
class PathStore:
    """Trajectories of ``N`` particles sampled at ``times`` (row ``i`` is particle ``i``)."""

    times: np.ndarray
    trajectories: np.ndarray
    seed: int
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.trajectories = np.asarray(self.trajectories, dtype=np.float64)
        if self.trajectories.ndim != 2 or self.trajectories.shape[1] != len(self.times):
            raise InvariantError("trajectories must be N x len(times)")

    @property
    def N(self) -> int:
        return self.trajectories.shape[0]

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not a stored path time")
        return j

    def at(self, t: float) -> np.ndarray:
        return self.trajectories[:, self.index_of(t)]

    def ensemble_at(self, t: float) -> ParticleEnsemble:
        return ParticleEnsemble(self.at(t), t)


# -- simulation -----------------------------------------------------------------


def _step_schedule(s: float, times, dt: float) -> tuple[np.ndarray, np.ndarray]:
    times = np.asarray(times, dtype=np.float64)
    if times[0] != s:
        raise InvariantError("times[0] must equal s")
    if np.any(np.diff(times) <= 0):
        raise InvariantError("times must be strictly increasing")
    if not dt > 0:
        raise InvariantError("dt must be positive")
    k = (times - s) / dt
    ki = np.rint(k).astype(np.int64)
    if np.any(np.abs(k - ki) > 1e-6):
        raise InvariantError("dt must divide every gap of the output times")
    return times, ki


class _KdeFeedback:
    """Density estimate on a fixed grid that may be widened once."""

    def __init__(self, k: KdeSpec, grid: Grid):
        self.k = k
        self.grid = grid
        self.expanded = False

    def ensure_inside(self, x: np.ndarray, t: float) -> None:
        g = self.grid
        if x.min() >= g.x_min and x.max() <= g.x_max:
            return
        if self.expanded:
            raise DomainEscapeError(f"particles left the (expanded) KDE grid at t = {t:g}")
        c = 0.5 * (g.x_min + g.x_max)
        half = (g.x_max - g.x_min)
        self.grid = Grid(c - half, c + half, 2 * g.n_cells)
        self.expanded = True
        self.ensure_inside(x, t)

    def values(self, x: np.ndarray, bw: float) -> np.ndarray:
        return kde_values(x, self.grid, self.k.kernel, bw)

    def evaluate(self, vals: np.ndarray, x: np.ndarray) -> np.ndarray:
        g = self.grid
        c = g.centers
        xp = np.concatenate([[g.x_min], c, [g.x_max]])
        fp = np.concatenate([[vals[0]], vals, [vals[-1]]])
        return np.interp(x, xp, fp, left=0.0, right=0.0)


def _initial_positions(zeta, N: int, seed: int) -> tuple[np.ndarray, bool]:
    if isinstance(zeta, ParticleEnsemble):
        if zeta.N != N:
            raise InvariantError("ensemble size does not match N")
        return zeta.positions.copy(), False
    datum = as_datum(zeta)
    x = datum.sample(rng.uniforms(seed, rng.INITIAL, 0, N))
    return np.asarray(x, dtype=np.float64), bool(getattr(datum, "is_dirac", False))


def _check_finite(x: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise NumericError(f"non-finite position for particle {bad} at t = {t:g}")


def simulate_ddsde(c: CoefficientSet, zeta, s: float, times, N: int, dt: float,
                   k: KdeSpec | None = None, seed: int = 0, *, feedback_every: int = 1,
                   kde_grid: Grid | None = None) -> PathStore:
    """Euler-Maruyama particle system with live density feedback.

    ``zeta`` is an initial datum (``Dirac``, ``Uniform``, ``Gaussian``), a
    :class:`GridDensity` (inverse-CDF sampling) or a :class:`ParticleEnsemble`.
    For a Dirac start the first ``K0_BOOTSTRAP`` sub-steps use the fixed
    bandwidth ``sqrt(dt)``.  ``feedback_every > 1`` re-estimates the density
    only every that many sub-steps (faster, biased).
    """
    k = k or KdeSpec()
    times, ks = _step_schedule(s, times, dt)
    x, dirac = _initial_positions(zeta, N, seed)
    out = np.empty((N, len(times)))
    out[:, 0] = x
    meta: dict[str, Any] = {
        "scheme": "euler-maruyama/kde-feedback",
        "dt": dt,
        "N": N,
        "kde": k.describe(),
        "density_floor": c.floor,
        "feedback_every": feedback_every,
        "bootstrap_steps": K0_BOOTSTRAP if dirac else 0,
    }
    needs_density = c.kind is Kind.NEMYTSKII and not c.is_linear
    fb = None
    if needs_density:
        grid = kde_grid or k.grid
        if grid is None:
            from .pde import auto_grid

            datum = as_datum(zeta) if not isinstance(zeta, ParticleEnsemble) else _EnsembleDatum(zeta)
            grid = auto_grid(c, datum, s, float(times[-1]), k.n_cells)
        fb = _KdeFeedback(k, grid)
    sqdt = math.sqrt(dt)
    drift_lo, drift_hi = math.inf, -math.inf
    vals = None
    j_out = 1
    for step in range(int(ks[-1])):
        t = s + step * dt
        if c.kind is Kind.MEAN_FIELD:
            b = np.full(N, c.mean_field_drift(points=x))
            sig = c.sigma
        elif fb is None:
            # law-independent coefficients: no density estimate needed
            ones = np.ones(N)
            b = c.drift_values(ones, x)
            sig = float(c.noise(ones[:1])[0])
        else:
            fb.ensure_inside(x, t)
            if vals is None or step % feedback_every == 0:
                if dirac and step < K0_BOOTSTRAP:
                    bw = sqdt
                elif k.bandwidth == "silverman":
                    bw = silverman_bandwidth(x)
                else:
                    bw = float(k.bandwidth)
                vals = fb.values(x, bw)
            ux = fb.evaluate(vals, x)
            b = c.drift_values(ux, x)
            sig = c.noise(ux)
        if np.ndim(b):
            drift_lo = min(drift_lo, float(np.min(b)))
            drift_hi = max(drift_hi, float(np.max(b)))
        x = x + b * dt + sig * sqdt * rng.normals(seed, rng.BROWNIAN, step, N)
        _check_finite(x, t + dt)
        while j_out < len(times) and ks[j_out] == step + 1:
            out[:, j_out] = x
            j_out += 1
    meta["drift_min"] = drift_lo if math.isfinite(drift_lo) else 0.0
    meta["drift_max"] = drift_hi if math.isfinite(drift_hi) else 0.0
    if fb is not None:
        meta["kde_x_min"], meta["kde_x_max"], meta["kde_cells"] = fb.grid.x_min, fb.grid.x_max, fb.grid.n_cells
        meta["kde_expanded"] = fb.expanded
    return PathStore(times, out, seed, meta)


@dataclass(frozen=True)
class _EnsembleDatum:
    ens: ParticleEnsemble
    is_dirac = False

    @property
    def mean(self):
        return float(np.mean(self.ens.positions))

    @property
    def var(self):
        return float(np.var(self.ens.positions))

    @property
    def sup(self):
        return math.inf


def simulate_linearized_sde(c: CoefficientSet, frozen: MarginalFlow, eta, s: float, times, N: int,
                            dt: float, seed: int = 0) -> PathStore:
    """Euler-Maruyama with coefficients read off a frozen (PDE-computed) marginal flow."""
    times, ks = _step_schedule(s, times, dt)
    if frozen.times[0] > s + 1e-12 or frozen.times[-1] < times[-1] - 1e-12:
        raise RangeError("frozen flow does not cover the simulation window")
    x, _ = _initial_positions(eta, N, seed)
    out = np.empty((N, len(times)))
    out[:, 0] = x
    g = frozen.grid
    j_out = 1
    sqdt = math.sqrt(dt)
    for step in range(int(ks[-1])):
        t = s + step * dt
        ub = frozen.at(t)
        if c.kind is Kind.MEAN_FIELD:
            b = c.mean_field_drift(density=ub)
            sig = c.sigma
        else:
            if x.min() < g.x_min or x.max() > g.x_max:
                raise DomainEscapeError(f"particles left the frozen-flow grid at t = {t:g}")
            ux = ub.evaluate(x)
            b = c.drift_values(ux, x)
            sig = c.noise(ux)
        x = x + b * dt + sig * sqdt * rng.normals(seed, rng.BROWNIAN, step, N)
        _check_finite(x, t + dt)
        while j_out < len(times) and ks[j_out] == step + 1:
            out[:, j_out] = x
            j_out += 1
    meta = {"scheme": "euler-maruyama/frozen-flow", "dt": dt, "N": N}
    return PathStore(times, out, seed, meta)
