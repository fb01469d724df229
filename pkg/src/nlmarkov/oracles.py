"""Closed-form reference solutions: Barenblatt profiles, the heat kernel and Cole-Hopf."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericError
from .grid import Grid, GridDensity


@dataclass(frozen=True)
class BarenblattExponents:
    alpha: float
    beta: float
    k: float

    @classmethod
    def of(cls, m: float, d: int) -> BarenblattExponents:
        alpha = d / (d * (m - 1) + 2)
        beta = alpha / d
        k = alpha * (m - 1) / (2 * m * d)
        return cls(alpha, beta, k)


def _check_m(m: float) -> None:
    if not m > 1:
        raise DomainError("Barenblatt profiles need m > 1; use heat_kernel for m = 1")


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def barenblatt_normalization(m: float, d: int) -> float:
    """Constant ``C(m, d)`` giving the Barenblatt profile unit mass.

    The mass is ``|S^{d-1}| int_0^R (C - k r^2)^p r^{d-1} dr`` with
    ``p = 1/(m-1)``; it scales like ``C^{p + d/2}``, so one radial quadrature at
    ``C = 1`` fixes ``C``.
    """
    _check_m(m)
    ex = BarenblattExponents.of(m, d)
    p = 1.0 / (m - 1)
    r_edge = 1.0 / math.sqrt(ex.k)
    val, err = integrate.quad(lambda r: (1.0 - ex.k * r * r) ** p * r ** (d - 1), 0.0, r_edge,
                              epsabs=1e-14, epsrel=1e-13, limit=200)
    if not np.isfinite(val) or err > 1e-9 * abs(val):
        raise NumericError(f"radial quadrature did not converge (estimate {err:.2e})")
    mass_at_one = sphere_area(d) * val
    return mass_at_one ** (-1.0 / (p + d / 2))


def barenblatt_radius(m: float, d: int, tau: float, C: float | None = None) -> float:
    """Support radius ``sqrt(C/k) * tau^beta`` at elapsed time ``tau``."""
    _check_m(m)
    ex = BarenblattExponents.of(m, d)
    C = barenblatt_normalization(m, d) if C is None else C
    return math.sqrt(C / ex.k) * tau**ex.beta


def barenblatt_profile(m: float, d: int, s: float, x0, t: float, x) -> np.ndarray:
    """Pointwise Barenblatt density at points ``x`` (shape ``(..., d)`` or ``(...)`` for d = 1)."""
    _check_m(m)
    if not t > s:
        raise DomainError("Barenblatt profile needs t > s")
    ex = BarenblattExponents.of(m, d)
    C = barenblatt_normalization(m, d)
    tau = t - s
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        r2 = (x - x0.reshape(())) ** 2
    else:
        r2 = np.sum((x - x0) ** 2, axis=-1)
    base = np.maximum(C - ex.k * r2 * tau ** (-2 * ex.beta), 0.0)
    return tau ** (-ex.alpha) * base ** (1.0 / (m - 1))


def _unit_cdf_1d(z, p):
    """CDF on [-1, 1] of the density proportional to ``(1 - z^2)^p``."""
    z = np.clip(z, -1.0, 1.0)
    half = 0.5 * special.betainc(0.5, p + 1.0, z * z)
    return 0.5 + np.sign(z) * half


def barenblatt(m: float, d: int, s: float, x0, t: float, grid: Grid) -> GridDensity:
    """Barenblatt solution from ``delta_{x0}`` at time ``s``, evaluated at time ``t``.

    For ``d = 1`` the result is the density on ``grid`` (exact cell averages,
    computed from the closed-form CDF through the regularised incomplete beta
    function).  For ``d > 1`` the grid is radial, ``[0, R]``, and the result is
    the radial mass density ``|S^{d-1}| r^{d-1} u(r)``, which integrates to one
    in ``r``.
    """
    _check_m(m)
    if not t > s:
        raise DomainError("Barenblatt solution needs t > s")
    tau = t - s
    R = barenblatt_radius(m, d, tau)
    p = 1.0 / (m - 1)
    if d == 1:
        x0 = float(np.asarray(x0, dtype=np.float64).reshape(-1)[0])
        F = _unit_cdf_1d((grid.edges - x0) / R, p)
    else:
        if grid.x_min < 0:
            raise DomainError("radial grid must start at r >= 0")
        # mass within radius r is I_{(r/R)^2}(d/2, p+1)
        F = special.betainc(d / 2, p + 1.0, np.clip(grid.edges / R, 0.0, 1.0) ** 2)
    values = np.diff(F) / grid.h
    out = GridDensity(grid, values, t)
    total = F[-1] - F[0]
    if abs(total - 1.0) > 1e-8:
        raise DomainError(f"grid captures only {total:.10f} of the Barenblatt mass")
    return out


def heat_kernel(s: float, x0: float, t: float, grid: Grid, diffusivity: float = 1.0) -> GridDensity:
    """Gaussian with variance ``2 * diffusivity * (t - s)`` centred at ``x0`` (exact cell averages)."""
    if not t > s:
        raise DomainError("heat kernel needs t > s")
    sd = math.sqrt(2 * diffusivity * (t - s))
    F = special.ndtr((grid.edges - x0) / sd)
    total = F[-1] - F[0]
    if abs(total - 1.0) > 1e-8:
        raise DomainError(f"grid captures only {total:.10f} of the Gaussian mass")
    return GridDensity(grid, np.diff(F) / grid.h, t)


def heat_peak(s: float, t: float) -> float:
    return (4 * math.pi * (t - s)) ** -0.5


def _log_phi(zeta: GridDensity, tau: float, x: np.ndarray, nodes_per_cell: int) -> np.ndarray:
    """``log int exp(-(x-y)^2/(4 tau) - U0(y)/2) dy`` with ``U0`` the CDF of ``zeta``.

    The integral over the grid uses Gauss-Legendre nodes per cell; the two
    tails beyond the grid (where ``U0`` is 0 and 1) are added in closed form.
    Exponents are shifted by their maximum before exponentiation.
    """
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes_per_cell)
    h = zeta.h
    y = (zeta.grid.edges[:-1, None] + 0.5 * h * (gl_x[None, :] + 1.0)).ravel()
    wy = np.tile(0.5 * h * gl_w, zeta.n_cells)
    U = zeta.cdf(y)
    mass = zeta.mass
    a, b = zeta.x_min, zeta.x_max
    log_w = np.log(wy) - 0.5 * U
    out = np.empty_like(x)
    sq = math.sqrt(2 * tau)
    log_norm = 0.5 * math.log(4 * math.pi * tau)
    chunk = max(1, 4_000_000 // len(y))
    for i in range(0, len(x), chunk):
        xs = x[i:i + chunk, None]
        e = log_w[None, :] - (xs - y[None, :]) ** 2 / (4 * tau)
        # closed-form tails: left U0 = 0, right U0 = mass
        left = log_norm + special.log_ndtr((a - xs[:, 0]) / sq)
        right = log_norm + special.log_ndtr((xs[:, 0] - b) / sq) - 0.5 * mass
        M = np.maximum(np.max(e, axis=1), np.maximum(left, right))
        s = np.exp(e - M[:, None]).sum(axis=1) + np.exp(left - M) + np.exp(right - M)
        out[i:i + chunk] = M + np.log(s)
    if not np.all(np.isfinite(out)):
        raise NumericError("Cole-Hopf quadrature produced non-finite values")
    return out


def cole_hopf_burgers(zeta: GridDensity, s: float, t: float, grid: Grid | None = None,
                      nodes_per_cell: int | None = None) -> GridDensity:
    """Exact solution of ``u_t = u_xx - (u^2/2)_x`` from ``zeta`` at time ``s``.

    With ``phi = exp(-U/2)`` and ``U`` the antiderivative of ``u`` the equation
    becomes the heat equation for ``phi``; cell averages follow exactly from
    ``u = -2 d/dx log phi`` as ``-2 (log phi(x_{i+1/2}) - log phi(x_{i-1/2})) / h``.
    """
    if not t > s:
        raise DomainError("Cole-Hopf solution needs t > s")
    grid = zeta.grid if grid is None else grid
    tau = t - s
    if nodes_per_cell is None:
        nodes_per_cell = int(min(64, max(6, math.ceil(6 * zeta.h / math.sqrt(2 * tau)))))
    lp = _log_phi(zeta, tau, grid.edges, nodes_per_cell)
    values = -2.0 * np.diff(lp) / grid.h
    # rounding-level negatives only; the exact solution is nonnegative
    values = np.where(values < 0, np.maximum(values, 0.0), values)
    return GridDensity(grid, values, t)
