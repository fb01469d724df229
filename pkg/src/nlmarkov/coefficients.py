"""Coefficient families of the nonlinear Kolmogorov operator.

Two kinds are supported:

* Nemytskii coefficients, where drift and diffusion depend on the law only
  through its density at the current point: drift ``b0(u(x)) D(x)`` and
  diffusion matrix ``beta(u(x)) / u(x)`` (times the identity), so the SDE noise
  amplitude is ``sqrt(2 beta(u) / u)``.
* Mean-field coefficients with drift ``int h(y) mu(dy)`` (constant in ``x``)
  and a constant noise amplitude ``sigma``.

All functions are vectorised over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np

from .errors import DomainError, InvariantError, RegistryError
from .grid import GridDensity

DENSITY_FLOOR = 1e-12

ScalarFn = Callable[[np.ndarray], np.ndarray]


class Kind(str, Enum):
    NEMYTSKII = "nemytskii"
    MEAN_FIELD = "meanfield"


@dataclass(frozen=True)
class Tabulated:
    """User-supplied function given by a table, linearly interpolated.

    Outside the table the end values are held constant.
    """

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or len(self.xs) < 2:
            raise InvariantError("tabulated function needs >= 2 matching nodes")
        if np.any(np.diff(self.xs) <= 0):
            raise InvariantError("tabulated nodes must be strictly increasing")

    def __call__(self, z):
        return np.interp(z, self.xs, self.ys)


# closed-form members -------------------------------------------------------


@dataclass(frozen=True)
class PowerBeta:
    """``beta(z) = |z|^(m-1) z``."""

    m: float

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.m == 1:
            return z.copy()
        return np.abs(z) ** (self.m - 1) * z

    def ratio(self, z):
        """``beta(z)/z`` evaluated without dividing (``|z|^(m-1)``)."""
        z = np.asarray(z, dtype=np.float64)
        if self.m == 1:
            return np.ones_like(z)
        return np.abs(z) ** (self.m - 1)

    def derivative(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.m == 1:
            return np.ones_like(z)
        return self.m * np.abs(z) ** (self.m - 1)


@dataclass(frozen=True)
class LinearFn:
    """``z -> slope * z``."""

    slope: float

    def __call__(self, z):
        return self.slope * np.asarray(z, dtype=np.float64)

    def derivative(self, z):
        return np.full_like(np.asarray(z, dtype=np.float64), self.slope)


@dataclass(frozen=True)
class ConstFn:
    value: float

    def __call__(self, z):
        return np.full_like(np.asarray(z, dtype=np.float64), self.value)

    def derivative(self, z):
        return np.zeros_like(np.asarray(z, dtype=np.float64))


@dataclass(frozen=True)
class SaturatingFn:
    """Bounded drift amplitude ``amp * z / (1 + z)`` for ``z >= 0``."""

    amp: float

    def __call__(self, z):
        z = np.maximum(np.asarray(z, dtype=np.float64), 0.0)
        return self.amp * z / (1.0 + z)


@dataclass(frozen=True)
class TanhField:
    """Confining vector field ``-amp * tanh(x / scale)``."""

    amp: float = 1.0
    scale: float = 1.0

    def __call__(self, x):
        return -self.amp * np.tanh(np.asarray(x, dtype=np.float64) / self.scale)


@dataclass(frozen=True)
class BumpFn:
    """Smooth compactly supported bump ``amp * (1 - ((y-c)/w)^2)^2`` on ``|y-c| < w``."""

    amp: float = 1.0
    center: float = 0.0
    width: float = 1.0

    def __call__(self, y):
        r = (np.asarray(y, dtype=np.float64) - self.center) / self.width
        return np.where(np.abs(r) < 1.0, self.amp * (1.0 - r * r) ** 2, 0.0)


@dataclass(frozen=True)
class IndicatorFn:
    """``amp`` on ``[a, b]``, zero elsewhere."""

    amp: float = 1.0
    a: float = -0.5
    b: float = 0.5

    def __call__(self, y):
        y = np.asarray(y, dtype=np.float64)
        return np.where((y >= self.a) & (y <= self.b), self.amp, 0.0)


def _derivative(fn, z: np.ndarray) -> np.ndarray:
    if hasattr(fn, "derivative"):
        return fn.derivative(z)
    dz = 1e-6 * np.maximum(1.0, np.abs(z))
    return (fn(z + dz) - fn(z - dz)) / (2 * dz)


# the coefficient set --------------------------------------------------------


@dataclass(frozen=True)
class CoefficientSet:
    """Evaluable coefficients of the operator; immutable once built.

    ``params`` records the registry name and arguments that produced the set so
    that it can be written back to a configuration file.
    """

    kind: Kind
    beta: Any = None
    b0: Any = None
    D: Any = None
    h: Any = None
    m: float | None = None
    dim: int = 1
    sigma: float = 0.0
    floor: float = DENSITY_FLOOR
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise InvariantError("dimension must be >= 1")
        nem = (self.beta, self.b0, self.D)
        if self.kind is Kind.NEMYTSKII:
            if any(f is None for f in nem) or self.h is not None:
                raise InvariantError("Nemytskii set needs beta, b0, D and no h")
            if float(np.asarray(self.beta(np.array([0.0])))[0]) != 0.0:
                raise InvariantError("beta(0) must be 0")
        elif self.kind is Kind.MEAN_FIELD:
            if self.h is None or any(f is not None for f in nem):
                raise InvariantError("mean-field set needs h only")
            if self.sigma < 0:
                raise InvariantError("sigma must be nonnegative")
        if not self.floor > 0:
            raise InvariantError("density floor must be positive")

    @property
    def is_linear(self) -> bool:
        """True when the operator does not depend on the law (heat-type sets)."""
        if self.kind is Kind.MEAN_FIELD:
            return False
        beta_linear = (isinstance(self.beta, PowerBeta) and self.beta.m == 1) or isinstance(self.beta, LinearFn)
        b0_const = isinstance(self.b0, ConstFn)
        return beta_linear and b0_const

    # pointwise pieces, as functions of the density value ------------------

    def diffusivity(self, u) -> np.ndarray:
        """``beta(u)/u`` with ``u`` floored; equals ``a`` in ``L = a d2 + b d``."""
        u = np.asarray(u, dtype=np.float64)
        if self.kind is Kind.MEAN_FIELD:
            return np.full_like(u, 0.5 * self.sigma**2)
        if hasattr(self.beta, "ratio"):
            return self.beta.ratio(np.maximum(u, 0.0))
        uf = np.maximum(u, self.floor)
        return self.beta(uf) / uf

    def noise(self, u) -> np.ndarray:
        """SDE noise amplitude ``sqrt(2 beta(u)/u)``."""
        return np.sqrt(np.maximum(2.0 * self.diffusivity(u), 0.0))

    def drift_values(self, u, x) -> np.ndarray:
        """Nemytskii drift ``b0(u) D(x)`` for matching arrays of density values and points."""
        return self.b0(u) * self.D(x)

    def beta_prime(self, u) -> np.ndarray:
        return _derivative(self.beta, np.asarray(u, dtype=np.float64))

    def flux_speed(self, u) -> np.ndarray:
        """``|d(b0(u) u)/du|``, the transport wave speed per unit ``|D|``."""
        u = np.asarray(u, dtype=np.float64)
        g = lambda z: self.b0(z) * z  # noqa: E731
        return np.abs(_derivative(g, u))

    def mean_field_drift(self, points=None, density: GridDensity | None = None) -> float:
        """``int h dmu`` against an empirical measure or a grid density."""
        if density is not None:
            # cell-wise Gauss-Legendre against the piecewise-constant density
            nodes, weights = np.polynomial.legendre.leggauss(4)
            hcell = density.h
            x = density.centers[:, None] + 0.5 * hcell * nodes[None, :]
            cell_int = 0.5 * hcell * (self.h(x) * weights[None, :]).sum(axis=1)
            return float(np.sum(cell_int * density.values))
        return float(np.mean(self.h(np.asarray(points, dtype=np.float64))))


# operations -----------------------------------------------------------------


def _check_point(u: GridDensity, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < u.x_min) or np.any(x > u.x_max):
        raise DomainError(f"evaluation point outside grid domain [{u.x_min}, {u.x_max}]")
    return x


def drift_at(c: CoefficientSet, u: GridDensity, x):
    """Drift of the operator at ``x`` given the law with density ``u``."""
    x = _check_point(u, x)
    if c.kind is Kind.MEAN_FIELD:
        return np.full_like(x, c.mean_field_drift(density=u))
    return c.drift_values(u.evaluate(x), x)


def diffusion_at(c: CoefficientSet, u: GridDensity, x):
    """Noise amplitude at ``x``; nonnegative."""
    x = _check_point(u, x)
    if np.any(u.values < 0):
        raise InvariantError("negative density passed to diffusion_at")
    if c.kind is Kind.MEAN_FIELD:
        return np.full_like(x, c.sigma)
    return c.noise(u.evaluate(x))


def _fn_from_spec(spec, role: str):
    """Build a coefficient function from a small spec (number, table or dict)."""
    if callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        return ConstFn(float(spec))
    if isinstance(spec, dict):
        spec = dict(spec)
        kind = spec.pop("kind")
        table = {
            "const": ConstFn,
            "linear": LinearFn,
            "power": PowerBeta,
            "saturating": SaturatingFn,
            "tanh": TanhField,
            "bump": BumpFn,
            "indicator": IndicatorFn,
        }
        if kind == "table":
            return Tabulated(tuple(map(float, spec["xs"])), tuple(map(float, spec["ys"])))
        if kind not in table:
            raise RegistryError(f"unknown {role} function kind {kind!r}")
        return table[kind](**{k: float(v) for k, v in spec.items()})
    raise RegistryError(f"cannot build {role} from {spec!r}")


def _validate_tabulated(c: CoefficientSet, u_max: float) -> None:
    z = np.linspace(0.0, u_max, 257)
    b = c.beta(z)
    if np.any(np.diff(b) < -1e-14):
        raise InvariantError("beta must be nondecreasing on [0, u_max]")
    if not np.all(np.isfinite(c.b0(z))):
        raise InvariantError("b0 must be bounded on [0, u_max]")


NAMES = ("pme", "heat", "burgers", "gpme", "meanfield")


def registry_lookup(name: str, **params) -> CoefficientSet:
    """Return the named coefficient set.

    ``pme``       porous media, ``m`` (default 2) and ``d`` (default 1)
    ``heat``      ``pme`` with ``m = 1``
    ``burgers``   ``beta(z) = z``, ``b0(z) = z/2``, ``D = 1`` in one dimension
    ``gpme``      generalised porous media: ``beta``, ``b0``, ``D`` given as specs
    ``meanfield`` drift ``int h dmu``: ``h`` spec and constant ``sigma``
    """
    floor = float(params.pop("floor", DENSITY_FLOOR))
    record = {"name": name, **params}
    if name == "heat":
        d = int(params.pop("d", 1))
        _no_extra(name, params)
        return CoefficientSet(Kind.NEMYTSKII, PowerBeta(1.0), ConstFn(0.0), ConstFn(0.0), m=1.0,
                              dim=d, floor=floor, name="heat", params=record)
    if name == "pme":
        m = float(params.pop("m", 2.0))
        d = int(params.pop("d", 1))
        _no_extra(name, params)
        if m < 1:
            raise RegistryError("porous media exponent must be >= 1")
        return CoefficientSet(Kind.NEMYTSKII, PowerBeta(m), ConstFn(0.0), ConstFn(0.0), m=m,
                              dim=d, floor=floor, name="pme", params=record)
    if name == "burgers":
        _no_extra(name, params)
        return CoefficientSet(Kind.NEMYTSKII, PowerBeta(1.0), LinearFn(0.5), ConstFn(1.0), m=1.0,
                              dim=1, floor=floor, name="burgers", params=record)
    if name == "gpme":
        diagnostics = bool(params.pop("validate", False))
        u_max = float(params.pop("u_max", 10.0))
        beta = _fn_from_spec(params.pop("beta", {"kind": "power", "m": 2.0}), "beta")
        b0 = _fn_from_spec(params.pop("b0", 0.0), "b0")
        D = _fn_from_spec(params.pop("D", 0.0), "D")
        d = int(params.pop("d", 1))
        _no_extra(name, params)
        m = beta.m if isinstance(beta, PowerBeta) else None
        c = CoefficientSet(Kind.NEMYTSKII, beta, b0, D, m=m, dim=d, floor=floor, name="gpme",
                           params=record)
        if diagnostics:
            _validate_tabulated(c, u_max)
        return c
    if name == "meanfield":
        h = _fn_from_spec(params.pop("h", {"kind": "bump"}), "h")
        sigma = float(params.pop("sigma", 0.0))
        d = int(params.pop("d", 1))
        _no_extra(name, params)
        return CoefficientSet(Kind.MEAN_FIELD, h=h, sigma=sigma, dim=d, floor=floor,
                              name="meanfield", params=record)
    raise RegistryError(f"unknown coefficient set {name!r}; known: {', '.join(NAMES)}")


def _no_extra(name: str, params: dict) -> None:
    if params:
        raise RegistryError(f"unexpected parameters for {name!r}: {sorted(params)}")
