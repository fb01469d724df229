"""Initial data: samplers and grid representations of the starting law.

Every datum can (a) draw samples by inverse CDF from supplied uniforms, which
keeps sampling addressable by the counter-based streams, and (b) project
itself onto a grid for the PDE solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvariantError
from .grid import Grid, GridDensity


@dataclass(frozen=True)
class Dirac:
    x0: float = 0.0

    is_dirac = True

    def sample(self, u: np.ndarray) -> np.ndarray:
        return np.full(len(u), float(self.x0))

    def to_density(self, grid: Grid, time_label: float = 0.0) -> GridDensity:
        return GridDensity.dirac(grid, self.x0, time_label)

    @property
    def mean(self) -> float:
        return float(self.x0)

    @property
    def var(self) -> float:
        return 0.0

    @property
    def sup(self) -> float:
        return math.inf


@dataclass(frozen=True)
class Uniform:
    a: float = -0.5
    b: float = 0.5

    is_dirac = False

    def __post_init__(self):
        if not self.b > self.a:
            raise InvariantError("uniform datum needs a < b")

    def sample(self, u):
        return self.a + (self.b - self.a) * np.asarray(u)

    def to_density(self, grid: Grid, time_label: float = 0.0) -> GridDensity:
        e = grid.edges
        F = np.clip((e - self.a) / (self.b - self.a), 0.0, 1.0)
        return GridDensity(grid, np.diff(F) / grid.h, time_label)

    @property
    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    @property
    def var(self) -> float:
        return (self.b - self.a) ** 2 / 12.0

    @property
    def sup(self) -> float:
        return 1.0 / (self.b - self.a)


@dataclass(frozen=True)
class Gaussian:
    mean_: float = 0.0
    var_: float = 1.0

    is_dirac = False

    def __post_init__(self):
        if not self.var_ > 0:
            raise InvariantError("gaussian datum needs positive variance")

    def sample(self, u):
        return self.mean_ + math.sqrt(self.var_) * special.ndtri(np.asarray(u))

    def to_density(self, grid: Grid, time_label: float = 0.0) -> GridDensity:
        F = special.ndtr((grid.edges - self.mean_) / math.sqrt(self.var_))
        return GridDensity(grid, np.diff(F) / grid.h, time_label)

    @property
    def mean(self) -> float:
        return self.mean_

    @property
    def var(self) -> float:
        return self.var_

    @property
    def sup(self) -> float:
        return 1.0 / math.sqrt(2 * math.pi * self.var_)


@dataclass(frozen=True)
class FromDensity:
    """Datum given by a grid density (piecewise-constant, piecewise-linear CDF)."""

    density: GridDensity

    is_dirac = False

    def sample(self, u):
        return inverse_cdf(self.density, np.asarray(u))

    def to_density(self, grid: Grid, time_label: float = 0.0) -> GridDensity:
        if grid.same_as(self.density.grid):
            return self.density.with_values(self.density.values.copy(), time_label)
        d = self.density.regrid(grid)
        return d.with_values(d.values, time_label)

    @property
    def mean(self) -> float:
        return self.density.mean()

    @property
    def var(self) -> float:
        return self.density.variance()

    @property
    def sup(self) -> float:
        return self.density.sup()


def inverse_cdf(density: GridDensity, u: np.ndarray) -> np.ndarray:
    """Quantiles of a piecewise-constant density: uniform placement inside cells.

    Cells with zero mass are never selected, so a single-cell histogram maps
    every uniform into that cell.
    """
    F = density.cdf_at_edges()
    F = F / F[-1]
    edges = density.grid.edges
    # first edge index with F >= u; the cell is the one ending there
    j = np.searchsorted(F, u, side="left")
    j = np.clip(j, 1, len(F) - 1)
    lo, hi = F[j - 1], F[j]
    frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)
    return edges[j - 1] + np.clip(frac, 0.0, 1.0) * density.h


def as_datum(zeta) -> Dirac | Uniform | Gaussian | FromDensity:
    if isinstance(zeta, GridDensity):
        return FromDensity(zeta)
    if hasattr(zeta, "sample") and hasattr(zeta, "to_density"):
        return zeta
    raise TypeError(f"not an initial datum: {zeta!r}")
