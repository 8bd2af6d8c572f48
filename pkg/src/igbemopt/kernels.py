"""Helmholtz/Laplace fundamental solutions, normal derivatives and incident
planewave fields.

Time convention e^{-i omega t}: the outgoing kernel is e^{ik|r|}/(4 pi |r|),
so incident fields must carry the matching phase (a wave travelling along
direction d is e^{i k d.x}).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_R_MIN = 1e-300


class SingularEvaluationError(ValueError):
    """Kernel evaluated at (numerically) zero separation."""


@dataclass(frozen=True)
class IncidentField:
    """Unit-amplitude planewave: u_in(x) = e^{i k d.x} with |d| = 1."""

    direction: np.ndarray
    wavenumber: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("propagation direction must be a unit vector")
        object.__setattr__(self, "direction", d)


def _norms(r: np.ndarray) -> np.ndarray:
    rn = np.linalg.norm(r, axis=-1)
    if np.any(rn < _R_MIN):
        raise SingularEvaluationError("kernel separation below 1e-300")
    return rn


def helmholtz_G(r, k: float):
    """e^{ik|r|} / (4 pi |r|); r may be (...,3)."""
    r = np.asarray(r, dtype=float)
    rn = _norms(r)
    return np.exp(1j * k * rn) / (4 * np.pi * rn)


def helmholtz_dGdn(r, n_y, k: float):
    """Double-layer kernel dG/dn_y = n_y . (grad G)(x - y), with r = x - y:

        (ik|r| - 1) e^{ik|r|} / (4 pi |r|^2) * (r.n_y)/|r|.

    This sign makes the free term C = 1 - circ(dGamma/dn) equal the interior
    solid-angle fraction (1/2 on smooth boundaries, 1/8 at a cube corner).
    """
    r = np.asarray(r, dtype=float)
    n_y = np.asarray(n_y, dtype=float)
    rn = _norms(r)
    rdn = np.sum(r * n_y, axis=-1)
    return (1j * k * rn - 1.0) * np.exp(1j * k * rn) / (4 * np.pi * rn**3) * rdn


def laplace_Gamma(r):
    """1 / (4 pi |r|)."""
    r = np.asarray(r, dtype=float)
    return 1.0 / (4 * np.pi * _norms(r))


def laplace_dGamma_dn(r, n_y):
    """Laplace double-layer kernel, same convention as helmholtz_dGdn:
    -(r.n_y) / (4 pi |r|^3) with r = x - y."""
    r = np.asarray(r, dtype=float)
    n_y = np.asarray(n_y, dtype=float)
    rn = _norms(r)
    return -np.sum(r * n_y, axis=-1) / (4 * np.pi * rn**3)


def incident_eval(field: IncidentField, x):
    """Planewave value e^{i k d.x} at points x of shape (...,3)."""
    x = np.asarray(x, dtype=float)
    phase = field.wavenumber * (x @ field.direction)
    return np.exp(1j * phase)


def incident_gradient(field: IncidentField, x):
    """Gradient i k d e^{i k d.x}."""
    x = np.asarray(x, dtype=float)
    u = incident_eval(field, x)
    return 1j * field.wavenumber * u[..., None] * field.direction
