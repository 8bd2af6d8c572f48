"""Objective, adjoint problem and shape sensitivities.

The objective is the summed squared sound pressure over observation points,
J = sum_m |u(z_m)|^2 / 2.  The adjoint field solves the same boundary
integral equation with the incident wave replaced by point sources
sum_m G(x - z_m) conj(u(z_m)), so the LU factors of the primary system are
reused.  The shape gradient with respect to a control point nu is

    s_nu = Re int_S (grad lambda . grad u - k^2 lambda u) R_nu n dS,

a regular integral evaluated with a fixed-order Gauss rule per Bezier cell
and pulled back from the analysis discretisation to the coarse design
control points through the transpose of the refinement map.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import kernels
from .bem import AnalysisMesh, BemSolution, eval_exterior
from .quadrature import AccuracyWarning

SENSITIVITY_ORDER = 6


@dataclass(frozen=True)
class Objective:
    """Squared-pressure objective over exterior observation points."""

    observation_points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.observation_points, dtype=float))
        object.__setattr__(self, "observation_points", pts)

    @property
    def M(self):
        return self.observation_points.shape[0]


def observation_values(solution: BemSolution, obj: Objective) -> np.ndarray:
    """Total field at the observation points."""
    if obj.M == 0:
        return np.zeros(0, dtype=complex)
    return eval_exterior(solution, obj.observation_points)


def objective(solution: BemSolution, obj: Objective,
              values: np.ndarray | None = None) -> float:
    """J = sum_m |u(z_m)|^2 / 2."""
    if values is None:
        values = observation_values(solution, obj)
    return float(np.sum(np.abs(values) ** 2) / 2.0)


def adjoint_rhs(solution: BemSolution, obj: Objective,
                values: np.ndarray | None = None,
                conjugate_source: bool = True) -> np.ndarray:
    """Adjoint source sum_m G(x_nu - z_m) conj(u(z_m)) at the collocation
    points.

    The conjugate on u(z_m) follows from dJ = Re(conj(u) du) for
    J = |u|^2/2; the finite-difference gradient check pins this convention
    (conjugate_source=False selects the unconjugated variant).
    """
    system = solution.system
    X = system.colloc.points
    if obj.M == 0:
        return np.zeros(len(X), dtype=complex)
    if values is None:
        values = observation_values(solution, obj)
    standoff = 2.0 * system.mesh.cell_radii.max()
    for z in obj.observation_points:
        if np.linalg.norm(system.mesh.points - z[None, :], axis=1).min() < standoff:
            warnings.warn("observation point within the near-field standoff "
                          "of the surface; adjoint source may lose accuracy",
                          AccuracyWarning, stacklevel=2)
    src = np.conj(values) if conjugate_source else values
    b = np.zeros(len(X), dtype=complex)
    for z, uz in zip(obj.observation_points, src):
        b += kernels.helmholtz_G(X - z[None, :], system.wavenumber) * uz
    return b


def adjoint_solve(solution: BemSolution, obj: Objective,
                  values: np.ndarray | None = None,
                  conjugate_source: bool = True) -> np.ndarray:
    """Adjoint coefficients lambda_nu; reuses the primary LU factors."""
    b = adjoint_rhs(solution, obj, values, conjugate_source)
    return sla.lu_solve(solution.system.lu(), b)


@dataclass(frozen=True)
class SensitivityField:
    """Adjoint coefficients and per-control-point shape gradients."""

    lam: np.ndarray       # (N_refined,) complex
    s_refined: np.ndarray  # (N_refined, 3) real
    s: np.ndarray          # (N_design, 3) real, pulled back through M


def sensitivities(solution: BemSolution, lam: np.ndarray,
                  refinement_map=None,
                  order: int = SENSITIVITY_ORDER) -> SensitivityField:
    """Shape gradients s_nu on the analysis model and their pull-back.

    refinement_map is the (N_refined x N_coarse) linear map of control
    points produced by knot refinement; None means the analysis model is
    the design model.
    """
    system = solution.system
    k = system.wavenumber
    mesh = AnalysisMesh(system.model, order)
    u = mesh.B @ solution.u
    lq = mesh.B @ lam
    gu = mesh.surface_gradient(solution.u)
    gl = mesh.surface_gradient(lam)
    # orientation pinned by the finite-difference gradient check: lambda
    # enters unconjugated (its source already carries conj(u(z_m)))
    f = np.real(np.einsum("qi,qi->q", gl, gu) - k**2 * lq * u)
    s_ref = mesh.B.T @ ((f * mesh.wJ)[:, None] * mesh.normals)
    s = s_ref if refinement_map is None else refinement_map.T @ s_ref
    return SensitivityField(lam, np.asarray(s_ref), np.asarray(s))


def radius_sensitivity(field: SensitivityField, design_cp: np.ndarray,
                       radius: float) -> float:
    """dJ/da for the radial one-parameter family scaling all control points
    of an origin-centred sphere: sum_nu s_nu . C_nu / a."""
    return float(np.einsum("ni,ni->", field.s, design_cp) / radius)


def dump_sensitivities(field: SensitivityField, path: str):
    """CSV dump `cp_id,sx,sy,sz` of the design-level gradients."""
    with open(path, "w") as fh:
        fh.write("cp_id,sx,sy,sz\n")
        for i, row in enumerate(field.s):
            fh.write(f"{i},{row[0]:.17g},{row[1]:.17g},{row[2]:.17g}\n")
