"""Collocation boundary-element discretisation of exterior Helmholtz
scattering from sound-hard bodies.

The boundary integral equation solved at each collocation point x is

    (1 - C(x)) u(x) + pv. int dG/dn_y(x - y) u(y) dS_y = u_in(x),

where C(x) = pv. int dGamma/dn_y dS_y is the equi-potential (interior
solid-angle) free term, computed from the static kernel in the same
quadrature pass; 1 - C = C = 1/2 on smooth boundary parts.  Off the surface
the total field is u(x) = u_in(x) - int dG/dn_y u dS_y.

Integrals use a fixed tensor-Gauss rule on the Bezier cells of each patch;
cells containing the collocation preimage are redone with a degenerate
triangle map and nearby cells with quadtree subdivision, both controlled by
a SubdivisionPolicy.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import kernels, nurbs
from .model import CollocationSet, ScatteringModel, collocation_points
from .quadrature import (SubdivisionPolicy, gauss_rule, integrate_singular,
                         near_singular_leaves, rule_on_rect)

_CHUNK = 64          # collocation rows per dense kernel block
_PARAM_TOL = 1e-10   # preimage-in-cell tolerance in parameter space


class InteriorPointError(ValueError):
    """An evaluation point lies inside (or on) the scatterer."""


@dataclass(frozen=True)
class MeshCell:
    """One Bezier cell: patch index, parameter rect and its quad-point slice."""

    patch: int
    rect: tuple
    q0: int
    q1: int
    gcols: np.ndarray   # global indices of the active basis functions
    Bloc: np.ndarray    # (q, nact) basis values at the cell's quad points


class AnalysisMesh:
    """Per-cell Gauss quadrature data for one model.

    Splits every patch into Bezier cells at its distinct interior knots and
    tabulates surface frames, weighted Jacobians and sparse basis-function
    matrices at an order x order Gauss rule per cell.
    """

    def __init__(self, model: ScatteringModel, order: int = 4):
        self.model = model
        self.order = order
        rule = gauss_rule(order)
        q_per_cell = rule.nodes.shape[0]

        cells = []
        pts, nrm, wj, jac, ys, yt = [], [], [], [], [], []
        rows, cols, bv, bsv, btv = [], [], [], [], []
        centers, radii = [], []
        q_off = 0
        for p, patch in enumerate(model.patches):
            bs = patch.knots_s.breakpoints()
            bt = patch.knots_t.breakpoints()
            gidx = model.global_index[p].ravel()
            ss, tt, ww, rects = [], [], [], []
            for i in range(len(bs) - 1):
                for j in range(len(bt) - 1):
                    rect = (bs[i], bs[i + 1], bt[j], bt[j + 1])
                    s, t, w = rule_on_rect(rule, rect)
                    ss.append(s)
                    tt.append(t)
                    ww.append(w)
                    rects.append(rect)
            s = np.concatenate(ss)
            t = np.concatenate(tt)
            w = np.concatenate(ww)
            geom = nurbs.eval_surface_many(patch, s, t, nders=1)
            idx, R, Rs, Rt = nurbs.rational_basis_many(patch, s, t)
            gcol = gidx[idx]
            m, nact = gcol.shape
            rows.append(np.repeat(np.arange(q_off, q_off + m), nact))
            cols.append(gcol.ravel())
            bv.append(R.ravel())
            bsv.append(Rs.ravel())
            btv.append(Rt.ravel())
            pts.append(geom["y"])
            nrm.append(geom["normal"])
            jac.append(geom["jac"])
            ys.append(geom["ys"])
            yt.append(geom["yt"])
            wj.append(w * geom["jac"])
            for c, rect in enumerate(rects):
                lo = c * q_per_cell
                hi = lo + q_per_cell
                gc = np.unique(gcol[lo])
                lut = {g: a for a, g in enumerate(gc)}
                Bloc = np.zeros((q_per_cell, len(gc)))
                for a in range(nact):
                    Bloc[np.arange(q_per_cell),
                         [lut[g] for g in gcol[lo:hi, a]]] += R[lo:hi, a]
                cp = pts[-1][lo:hi]
                center = cp.mean(axis=0)
                radius = np.linalg.norm(cp - center, axis=1).max() * 1.25
                centers.append(center)
                radii.append(radius)
                cells.append(MeshCell(p, rect, q_off + lo, q_off + hi, gc, Bloc))
            q_off += m

        N = model.N
        Q = q_off
        self.points = np.concatenate(pts)
        self.normals = np.concatenate(nrm)
        self.jac = np.concatenate(jac)
        self.ys = np.concatenate(ys)
        self.yt = np.concatenate(yt)
        self.wJ = np.concatenate(wj)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        self.B = sp.csr_array((np.concatenate(bv), (r, c)), shape=(Q, N))
        self.Bs = sp.csr_array((np.concatenate(bsv), (r, c)), shape=(Q, N))
        self.Bt = sp.csr_array((np.concatenate(btv), (r, c)), shape=(Q, N))
        self.cells = cells
        self.cell_centers = np.array(centers)
        self.cell_radii = np.array(radii)
        self.cell_patch = np.array([cell.patch for cell in cells])

    @property
    def n_quad(self):
        return self.points.shape[0]

    def area(self) -> float:
        """Total surface area (useful as a sanity check)."""
        return float(self.wJ.sum())

    def surface_gradient(self, u: np.ndarray) -> np.ndarray:
        """Tangential gradient of the surface field u at the quad points.

        Valid for fields with vanishing normal derivative:
        grad u = (u_s (y_t x n) + u_t (n x y_s)) / J.
        """
        us = self.Bs @ u
        ut = self.Bt @ u
        g = (us[:, None] * np.cross(self.yt, self.normals)
             + ut[:, None] * np.cross(self.normals, self.ys))
        return g / self.jac[:, None]


def _kernel_rows(x, points, normals, wJ, k):
    """Weighted double-layer kernels of all quad points seen from rows x.

    Returns (KH, KL): Helmholtz and static kernels times quadrature weight,
    each of shape (len(x), Q).
    """
    r = x[:, None, :] - points[None, :, :]
    rn = np.sqrt(np.einsum("mqi,mqi->mq", r, r))
    rn = np.maximum(rn, 1e-300)
    rdn = np.einsum("mqi,qi->mq", r, normals)
    base = rdn / (4.0 * np.pi * rn**3) * wJ[None, :]
    KH = (1j * k * rn - 1.0) * np.exp(1j * k * rn) * base
    KL = -base
    return KH, KL


def _point_kernels(x, geo, k):
    """Both kernels at the points of one rational_geometry evaluation,
    including the surface Jacobian (but no quadrature weight)."""
    r = x[None, :] - geo["y"]
    rn = np.maximum(np.linalg.norm(r, axis=1), 1e-300)
    rdn = np.einsum("mi,mi->m", r, geo["normal"])
    base = rdn / (4.0 * np.pi * rn**3) * geo["jac"]
    return (1j * k * rn - 1.0) * np.exp(1j * k * rn) * base, -base


def _correction_cells(mesh: AnalysisMesh, x, preimages, policy):
    """Cells needing singular or near-singular treatment for one
    collocation/evaluation point.

    preimages is an iterable of (patch, s, t) parameter preimages of x (empty
    for off-surface points).  Returns ([(cell id, apex)], [near cell ids]).
    """
    singular = []
    for (p, sh, th) in preimages:
        for ci in np.nonzero(mesh.cell_patch == p)[0]:
            s0, s1, t0, t1 = mesh.cells[ci].rect
            if (s0 - _PARAM_TOL <= sh <= s1 + _PARAM_TOL
                    and t0 - _PARAM_TOL <= th <= t1 + _PARAM_TOL):
                singular.append((ci, (sh, th)))
    sing_ids = {ci for ci, _ in singular}
    dist = np.linalg.norm(mesh.cell_centers - x[None, :], axis=1)
    dist = np.maximum(dist - mesh.cell_radii, 1e-12)
    near = np.nonzero(2 * mesh.cell_radii / dist > policy.distance_ratio)[0]
    near = [ci for ci in near if ci not in sing_ids]
    return singular, near


def _near_batches(mesh: AnalysisMesh, near_ids, x, policy):
    """Quadtree quadrature points of the near cells, concatenated per patch.

    Yields (patch id, cell ids, s, t, w)."""
    rule = gauss_rule(policy.base_order)
    groups = {}
    for ci in near_ids:
        groups.setdefault(mesh.cells[ci].patch, []).append(ci)
    cache = getattr(mesh, "_leaf_geo_cache", None)
    if cache is None:
        cache = {}
        mesh._leaf_geo_cache = cache
    for p, cis in groups.items():
        patch = mesh.model.patches[p]
        ss, tt, ww = [], [], []
        for ci in cis:
            for r in near_singular_leaves(patch, mesh.cells[ci].rect, x,
                                          policy, cache.setdefault(p, {})):
                s, t, w = rule_on_rect(rule, r)
                ss.append(s)
                tt.append(t)
                ww.append(w)
        yield (p, cis, np.concatenate(ss), np.concatenate(tt),
               np.concatenate(ww))


def _subtract_base(mesh, cells_ids, x, k, row, c_acc):
    """Remove the base-rule contribution of the given cells from a matrix
    row (or None) and return the updated static-kernel accumulator."""
    for ci in cells_ids:
        cell = mesh.cells[ci]
        sl = slice(cell.q0, cell.q1)
        KH, KL = _kernel_rows(x[None, :], mesh.points[sl], mesh.normals[sl],
                              mesh.wJ[sl], k)
        if row is not None:
            row[cell.gcols] -= KH[0] @ cell.Bloc
        c_acc -= KL[0].sum()
    return c_acc


def collocation_basis(model: ScatteringModel,
                      colloc: CollocationSet) -> np.ndarray:
    """Dense N x N matrix of basis values at the collocation preimages:
    row nu maps coefficients to the surface field value at x_nu."""
    N = model.N
    Rc = np.zeros((N, N))
    by_patch = {}
    for nu, (p, s, t) in enumerate(colloc.entries):
        by_patch.setdefault(p, []).append((nu, s, t))
    for p, items in by_patch.items():
        nus = [it[0] for it in items]
        s = np.array([it[1] for it in items])
        t = np.array([it[2] for it in items])
        idx, R, _, _ = nurbs.rational_basis_many(model.patches[p], s, t)
        gcols = model.global_index[p].ravel()[idx]
        for i, nu in enumerate(nus):
            Rc[nu, gcols[i]] += R[i]
    return Rc


@dataclass
class BemSystem:
    """Dense collocation system A u = u_in with its free-term vector."""

    model: ScatteringModel
    mesh: AnalysisMesh
    colloc: CollocationSet
    wavenumber: float
    A: np.ndarray
    C: np.ndarray
    policy: SubdivisionPolicy
    _lu: tuple | None = None

    def lu(self):
        if self._lu is None:
            self._lu = sla.lu_factor(self.A)
        return self._lu


def assemble(model: ScatteringModel, k: float,
             policy: SubdivisionPolicy | None = None,
             mesh: AnalysisMesh | None = None) -> BemSystem:
    """Build the dense collocation matrix and free terms for wavenumber k."""
    policy = policy or SubdivisionPolicy()
    mesh = mesh or AnalysisMesh(model, policy.base_order)
    colloc = collocation_points(model)
    X = colloc.points
    N = model.N

    H = np.empty((N, N), dtype=complex)
    c_int = np.empty(N)
    for lo in range(0, N, _CHUNK):
        hi = min(lo + _CHUNK, N)
        KH, KL = _kernel_rows(X[lo:hi], mesh.points, mesh.normals, mesh.wJ, k)
        H[lo:hi] = KH @ mesh.B
        c_int[lo:hi] = KL.sum(axis=1)

    for nu in range(N):
        x = X[nu]
        singular, near = _correction_cells(mesh, x, colloc.param_preimages[nu],
                                           policy)
        row = H[nu]
        c_acc = c_int[nu]

        for ci, apex in singular:
            cell = mesh.cells[ci]
            c_acc = _subtract_base(mesh, [ci], x, k, row, c_acc)
            patch = model.patches[cell.patch]
            gidx_flat = model.global_index[cell.patch].ravel()
            holder = {}

            def integrand(s, t):
                geo = nurbs.rational_geometry(patch, s, t)
                holder["gcols"] = gidx_flat[geo["idx"][0]]
                KH1, KL1 = _point_kernels(x, geo, k)
                out = np.empty((len(s), geo["R"].shape[1] + 1), dtype=complex)
                out[:, :-1] = KH1[:, None] * geo["R"]
                out[:, -1] = KL1
                return out

            acc = integrate_singular(integrand, cell.rect, apex, policy)
            row[holder["gcols"]] += acc[:-1]
            c_acc += acc[-1].real

        for p, cis, s, t, w in _near_batches(mesh, near, x, policy):
            c_acc = _subtract_base(mesh, cis, x, k, row, c_acc)
            patch = model.patches[p]
            gidx_flat = model.global_index[p].ravel()
            geo = nurbs.rational_geometry(patch, s, t)
            KH1, KL1 = _point_kernels(x, geo, k)
            vals = (w * KH1)[:, None] * geo["R"]
            np.add.at(row, gidx_flat[geo["idx"]].ravel(), vals.ravel())
            c_acc += (w * KL1).sum().real
        c_int[nu] = c_acc

    # c_int is the interior solid-angle fraction (the equi-potential free
    # term); the exterior limit of the representation weighs the surface
    # field value at x_nu, i.e. the collocation basis row, by 1 - c_int.
    # 1 - c_int coincides with c_int on smooth parts of the boundary.
    Rc = collocation_basis(model, colloc)
    A = H + (1.0 - c_int)[:, None] * Rc
    return BemSystem(model, mesh, colloc, k, A, c_int, policy)


def free_terms(model: ScatteringModel,
               policy: SubdivisionPolicy | None = None) -> np.ndarray:
    """Equi-potential free-term coefficients C at every collocation point:
    the interior solid-angle fraction, 1/2 on smooth parts of the boundary,
    1/4 at a square edge midpoint, 1/8 at a cube corner.
    """
    return assemble(model, 0.0, policy).C


@dataclass
class BemSolution:
    """Surface solution of one scattering problem."""

    system: BemSystem
    incident: kernels.IncidentField
    u: np.ndarray
    residual: float


def solve(system: BemSystem, incident: kernels.IncidentField) -> BemSolution:
    """Solve the collocation system for the surface field by dense LU."""
    if incident.wavenumber != system.wavenumber:
        raise ValueError("incident field and system wavenumbers differ")
    rhs = kernels.incident_eval(incident, system.colloc.points)
    u = sla.lu_solve(system.lu(), rhs)
    res = np.linalg.norm(system.A @ u - rhs) / np.linalg.norm(rhs)
    if res > 1e-10:
        warnings.warn(f"linear-solve residual {res:.2e} exceeds 1e-10")
    return BemSolution(system, incident, u, float(res))


def eval_on_surface(solution: BemSolution, patch_id: int, s, t) -> np.ndarray:
    """Surface field values at parameter points of one patch."""
    model = solution.system.model
    idx, R, _, _ = nurbs.rational_basis_many(model.patches[patch_id], s, t)
    uloc = solution.u[model.global_index[patch_id].ravel()]
    return np.einsum("ma,ma->m", R, uloc[idx])


def exterior_solid_angle(mesh: AnalysisMesh, points,
                         policy: SubdivisionPolicy | None = None) -> np.ndarray:
    """1 - int dGamma/dn over the surface: ~1 outside the body, ~0 inside."""
    policy = policy or SubdivisionPolicy()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(points))
    for i, x in enumerate(points):
        _, KL = _kernel_rows(x[None, :], mesh.points, mesh.normals, mesh.wJ,
                             0.0)
        val = KL[0].sum()
        _, near = _correction_cells(mesh, x, (), policy)
        for p, cis, s, t, w in _near_batches(mesh, near, x, policy):
            val = _subtract_base(mesh, cis, x, 0.0, None, val)
            geo = nurbs.rational_geometry(mesh.model.patches[p], s, t)
            _, KL1 = _point_kernels(x, geo, 0.0)
            val += (w * KL1).sum().real
        out[i] = 1.0 - val
    return out


def eval_exterior(solution: BemSolution, points,
                  policy: SubdivisionPolicy | None = None,
                  check_interior: bool = True) -> np.ndarray:
    """Total field u_in - int dG/dn u at exterior points.

    Near-surface points get quadtree-refined quadrature; points classified as
    interior (solid angle < 1/2) raise InteriorPointError unless
    check_interior is False.
    """
    system = solution.system
    mesh = system.mesh
    policy = policy or system.policy
    k = system.wavenumber
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if check_interior:
        angles = exterior_solid_angle(mesh, points, policy)
        if np.any(angles < 0.5):
            bad = points[angles < 0.5]
            raise InteriorPointError(f"points inside the scatterer: {bad}")

    Bu = mesh.B @ solution.u
    out = np.empty(len(points), dtype=complex)
    for i, x in enumerate(points):
        KH, _ = _kernel_rows(x[None, :], mesh.points, mesh.normals, mesh.wJ, k)
        val = KH[0] @ Bu
        _, near = _correction_cells(mesh, x, (), policy)
        for p, cis, s, t, w in _near_batches(mesh, near, x, policy):
            for ci in cis:
                cell = mesh.cells[ci]
                sl = slice(cell.q0, cell.q1)
                KHc, _ = _kernel_rows(x[None, :], mesh.points[sl],
                                      mesh.normals[sl], mesh.wJ[sl], k)
                val -= KHc[0] @ Bu[sl]
            geo = nurbs.rational_geometry(mesh.model.patches[p], s, t)
            KH1, _ = _point_kernels(x, geo, k)
            uloc = solution.u[mesh.model.global_index[p].ravel()]
            uval = np.einsum("ma,ma->m", geo["R"], uloc[geo["idx"]])
            val += np.sum(w * KH1 * uval)
        out[i] = kernels.incident_eval(solution.incident, x) - val
    return out


def dump_system(system: BemSystem, prefix: str):
    """Write the dense matrix (complex128, little-endian, row-major) and a
    JSON sidecar describing it."""
    system.A.astype("<c16").tofile(prefix + ".bin")
    meta = {"shape": list(system.A.shape), "dtype": "complex128",
            "byte_order": "little", "layout": "row-major",
            "wavenumber": system.wavenumber}
    with open(prefix + ".json", "w") as f:
        json.dump(meta, f, indent=2)
