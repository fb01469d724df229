"""Grid densities on a uniform 1-D mesh and time-indexed flows of them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import GridMismatchError, InvariantError, RangeError

MASS_TOL = 1e-8
NEG_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred mesh on ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise InvariantError(f"empty grid [{self.x_min}, {self.x_max}]")
        if self.n_cells < 1:
            raise InvariantError("n_cells must be >= 1")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.h

    def cell_of(self, x: float) -> int:
        i = int(np.floor((x - self.x_min) / self.h))
        return min(max(i, 0), self.n_cells - 1)

    def same_as(self, other: Grid) -> bool:
        return (
            self.n_cells == other.n_cells
            and np.isclose(self.x_min, other.x_min, rtol=0, atol=1e-12 * self.h)
            and np.isclose(self.x_max, other.x_max, rtol=0, atol=1e-12 * self.h)
        )


@dataclass
class GridDensity:
    """Piecewise-constant probability density (cell averages) on a uniform grid.

    ``values`` are in units of 1/length, so ``h * values.sum()`` is the mass.
    """

    grid: Grid
    values: np.ndarray
    time_label: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.n_cells,):
            raise InvariantError(
                f"values shape {self.values.shape} does not match {self.grid.n_cells} cells"
            )

    @classmethod
    def from_values(cls, grid: Grid, values, time_label: float = 0.0, normalize: bool = False):
        values = np.asarray(values, dtype=np.float64)
        if normalize:
            mass = grid.h * values.sum()
            if not mass > 0:
                raise InvariantError("cannot normalize a density of zero mass")
            values = values / mass
        d = cls(grid, values, time_label)
        d.check()
        return d

    @classmethod
    def dirac(cls, grid: Grid, x0: float, time_label: float = 0.0) -> GridDensity:
        """Single-cell histogram carrying all mass in the cell containing ``x0``."""
        values = np.zeros(grid.n_cells)
        values[grid.cell_of(x0)] = 1.0 / grid.h
        return cls(grid, values, time_label)

    # convenience views
    @property
    def x_min(self) -> float:
        return self.grid.x_min

    @property
    def x_max(self) -> float:
        return self.grid.x_max

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def centers(self) -> np.ndarray:
        return self.grid.centers

    @property
    def mass(self) -> float:
        return float(self.h * self.values.sum())

    def check(self, mass_tol: float = MASS_TOL) -> None:
        if not np.all(np.isfinite(self.values)):
            raise InvariantError("density has non-finite values")
        if self.values.min() < -NEG_TOL:
            raise InvariantError(f"negative density value {self.values.min():.3e}")
        if abs(self.mass - 1.0) > mass_tol:
            raise InvariantError(f"density mass {self.mass!r} differs from 1 by more than {mass_tol}")

    def cdf_at_edges(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.values) * self.h])

    def cdf(self, x) -> np.ndarray:
        """Piecewise-linear CDF (exact for a piecewise-constant density)."""
        return np.interp(x, self.grid.edges, self.cdf_at_edges(), left=0.0, right=self.mass)

    def mass_between(self, a, b) -> np.ndarray:
        return self.cdf(b) - self.cdf(a)

    def evaluate(self, x) -> np.ndarray:
        """Point values: linear interpolation between cell centres, zero off the domain.

        Between a domain edge and the nearest centre the edge cell value is held.
        """
        c = self.grid.centers
        xp = np.concatenate([[self.x_min], c, [self.x_max]])
        fp = np.concatenate([[self.values[0]], self.values, [self.values[-1]]])
        return np.interp(x, xp, fp, left=0.0, right=0.0)

    def mean(self) -> float:
        return float(self.h * np.sum(self.centers * self.values))

    def variance(self) -> float:
        """Exact variance of the piecewise-constant density."""
        c = self.centers
        mu = self.mean()
        return float(self.h * np.sum(self.values * ((c - mu) ** 2 + self.h**2 / 12.0)))

    def sup(self) -> float:
        return float(self.values.max())

    def l1(self, other: GridDensity) -> float:
        if not self.grid.same_as(other.grid):
            raise GridMismatchError("L1 distance needs identical grids")
        return float(self.h * np.abs(self.values - other.values).sum())

    def with_values(self, values, time_label: float | None = None) -> GridDensity:
        return GridDensity(self.grid, values, self.time_label if time_label is None else time_label)

    def regrid(self, grid: Grid) -> GridDensity:
        """Conservative transfer onto another grid through the CDF."""
        F = self.cdf(grid.edges)
        return GridDensity(grid, np.diff(F) / grid.h, self.time_label)


@dataclass
class MarginalFlow:
    """Time-indexed sequence of grid densities starting at time ``s``."""

    s: float
    times: np.ndarray
    densities: list[GridDensity]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if len(self.times) != len(self.densities):
            raise InvariantError("one density per time is required")
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise InvariantError("flow times must be strictly increasing")
        if len(self.times) and self.times[0] != self.s:
            raise InvariantError("first flow time must equal the start time s")

    @property
    def grid(self) -> Grid:
        return self.densities[0].grid

    def __len__(self) -> int:
        return len(self.times)

    def at(self, t: float) -> GridDensity:
        """Density at ``t``; linear interpolation in time between stored densities."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise RangeError(f"time {t} outside flow range [{times[0]}, {times[-1]}]")
        j = int(np.searchsorted(times, t))
        if j < len(times) and abs(times[j] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.densities[j]
        if j > 0 and abs(times[j - 1] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.densities[j - 1]
        j = min(max(j, 1), len(times) - 1)
        t0, t1 = times[j - 1], times[j]
        w = (t - t0) / (t1 - t0)
        v = (1 - w) * self.densities[j - 1].values + w * self.densities[j].values
        return GridDensity(self.grid, v, t)

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not a flow output time")
        return j

    def check(self, mass_tol: float = MASS_TOL) -> None:
        for d in self.densities:
            d.check(mass_tol)
        if self.densities[0].time_label != self.s:
            raise InvariantError("first density must carry time label s")

    def w1_lipschitz(self) -> float:
        """Run-reported constant C with W1(u_i, u_{i+1}) <= C * dt_i (weak-continuity proxy)."""
        from .verify import w1_grid

        c = 0.0
        for i in range(len(self.times) - 1):
            dt = self.times[i + 1] - self.times[i]
            c = max(c, w1_grid(self.densities[i], self.densities[i + 1]) / dt)
        return c
