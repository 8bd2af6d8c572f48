"""Analytic scattering of a plane wave by a sound-hard sphere.

Ground truth for the boundary-element solver: the classical partial-wave
series for the total field outside the sphere, the squared-amplitude
objective at an observation point and a Brent search for locally optimal
radii.  The incident wave travels in -z and the observation point sits on
the +z axis, so the polar-angle argument of the Legendre polynomials is
cos(theta - pi) = -cos(theta).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt
from scipy import special


def spherical_bessel(n: int, x: float):
    """(j_n(x), j_n'(x)) for all orders 0..n at once; x > 0."""
    if x <= 0:
        raise ValueError("argument must be positive")
    orders = np.arange(n + 1)
    return (special.spherical_jn(orders, x),
            special.spherical_jn(orders, x, derivative=True))


def spherical_hankel1(n: int, x: float):
    """(h_n(x), h_n'(x)) of the first kind for orders 0..n; x > 0."""
    if x <= 0:
        raise ValueError("argument must be positive")
    orders = np.arange(n + 1)
    # y_n overflows for n >> x; keep the infs, callers treat them as limits
    with np.errstate(invalid="ignore", over="ignore"):
        h = (special.spherical_jn(orders, x)
             + 1j * special.spherical_yn(orders, x))
        hp = (special.spherical_jn(orders, x, derivative=True)
              + 1j * special.spherical_yn(orders, x, derivative=True))
    return h, hp


def legendre_p(n: int, x: float) -> float:
    """Legendre polynomial P_n(x)."""
    return float(special.eval_legendre(n, x))


def default_n_max(k: float, r: float) -> int:
    """Truncation order: terms decay super-exponentially past n ~ kr."""
    return max(40, int(np.ceil(k * r)) + 30)


@dataclass(frozen=True)
class SphereSeries:
    """Series parameters: wavenumber, radius, observation (r, theta)."""

    wavenumber: float
    radius: float
    r: float
    theta: float = 0.0
    n_max: int | None = None

    def __post_init__(self):
        if self.r <= self.radius:
            raise ValueError("observation point must lie outside the sphere")


def series_u(series: SphereSeries) -> complex:
    """Total field at the observation point.

    u = sum_n i^n (2n+1) (j_n(kr) - A'_n h_n(kr)) P_n(cos(theta - pi)),
    A'_n = j_n'(ka) / h_n'(ka); the scattered term carries h_n(kr), the
    only radial dependence consistent with the Mie expansion.
    """
    k = series.wavenumber
    nmax = series.n_max or default_n_max(k, series.r)
    ka, kr = k * series.radius, k * series.r
    _, jp_a = spherical_bessel(nmax, ka)
    _, hp_a = spherical_hankel1(nmax, ka)
    j_r, _ = spherical_bessel(nmax, kr)
    h_r, _ = spherical_hankel1(nmax, kr)
    n = np.arange(nmax + 1)
    # h_n'(ka) overflows for n >> ka; those reflection coefficients are 0
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        An = jp_a / hp_a
    An[~np.isfinite(An)] = 0.0
    Pn = special.eval_legendre(n, np.cos(series.theta - np.pi))
    terms = (1j**n) * (2 * n + 1) * (j_r - An * h_r) * Pn
    return complex(terms.sum())


def objective_of_radius(a: float, k: float, r: float,
                        theta: float = 0.0) -> float:
    """J(a) = |u(z)|^2 / 2 at the observation point for sphere radius a."""
    u = series_u(SphereSeries(k, a, r, theta))
    return abs(u) ** 2 / 2.0


def brent_optimize_radius(k: float, r: float, a_start: float,
                          bracket=(1.0, 7.0), xatol: float = 1e-10):
    """Locally maximize J(a) near a_start by bounded Brent search.

    The bracket is shrunk to the basin of the maximum nearest a_start
    (scanned on a fine grid) so the bounded minimizer cannot hop between
    the multiple local maxima of the objective.
    """
    lo, hi = bracket
    grid = np.arange(lo, hi + 1e-12, 0.01)
    vals = np.array([objective_of_radius(a, k, r) for a in grid])
    i = int(np.argmin(np.abs(grid - a_start)))
    while 0 < i and vals[i - 1] > vals[i]:
        i -= 1
    while i < len(grid) - 1 and vals[i + 1] > vals[i]:
        i += 1
    blo = grid[max(i - 1, 0)]
    bhi = grid[min(i + 1, len(grid) - 1)]
    res = sopt.minimize_scalar(lambda a: -objective_of_radius(a, k, r),
                               bounds=(blo, bhi), method="bounded",
                               options={"xatol": xatol})
    return float(res.x), float(-res.fun)
