"""Multi-patch scattering model: unification of coincident control points into
global unknowns, Greville collocation points, analysis refinement with its
linear coarse-to-fine control-point map, and design-variable bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from . import nurbs

DEFAULT_TOL_FACTOR = 1e-8  # coincidence_tol = factor * bounding-box diagonal


class AmbiguousGeometryError(ValueError):
    """A coincidence merge chain collapses points farther apart than 10x tol."""


class TopologyError(ValueError):
    """Collocation merging is inconsistent with control-point unification."""


def _bbox_diagonal(patches) -> float:
    pts = np.concatenate([p.control_points.reshape(-1, 3) for p in patches])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


@dataclass(frozen=True)
class ScatteringModel:
    """Patches plus the global control-point index map.

    global_index[p] has the shape of patch p's control grid and holds the
    global unknown index of every local control point; global_cp is (N, 3).
    """

    patches: tuple
    patch_names: tuple
    global_index: tuple
    global_cp: np.ndarray
    coincidence_tol: float

    @property
    def N(self) -> int:
        return len(self.global_cp)

    def preimages(self):
        """List over global indices of the local (patch, k, l) triplets."""
        pre = [[] for _ in range(self.N)]
        for p, gidx in enumerate(self.global_index):
            ns, nt = gidx.shape
            for k in range(ns):
                for l in range(nt):
                    pre[gidx[k, l]].append((p, k, l))
        return pre

    def with_global_cp(self, cp_new: np.ndarray) -> "ScatteringModel":
        """New model with moved global control points (same connectivity)."""
        cp_new = np.asarray(cp_new, dtype=float).reshape(self.N, 3)
        patches = []
        for p, patch in enumerate(self.patches):
            patches.append(nurbs.NurbsPatch(
                patch.knots_s, patch.knots_t,
                cp_new[self.global_index[p]], patch.weights))
        return ScatteringModel(tuple(patches), self.patch_names,
                               self.global_index, cp_new, self.coincidence_tol)

    def patch_id(self, name: str) -> int:
        return self.patch_names.index(name)


def unify_control_points(patches, coincidence_tol: float | None = None,
                         names=None) -> ScatteringModel:
    """Merge geometrically coincident control points into global unknowns.

    Merging is transitive (union-find); a chain that collapses points farther
    apart than 10x the tolerance raises AmbiguousGeometryError.
    """
    patches = tuple(patches)
    if names is None:
        names = tuple(f"patch{i}" for i in range(len(patches)))
    if coincidence_tol is None:
        coincidence_tol = DEFAULT_TOL_FACTOR * _bbox_diagonal(patches)

    pts = np.concatenate([p.control_points.reshape(-1, 3) for p in patches])
    uf = _UnionFind(len(pts))
    tree = cKDTree(pts)
    for i, j in tree.query_pairs(coincidence_tol):
        uf.union(i, j)

    roots = np.array([uf.find(i) for i in range(len(pts))])
    # check merge-chain diameter per cluster
    for r in np.unique(roots):
        cluster = pts[roots == r]
        if len(cluster) > 1:
            spread = np.linalg.norm(cluster.max(axis=0) - cluster.min(axis=0))
            if spread > 10 * coincidence_tol:
                raise AmbiguousGeometryError(
                    f"merge chain collapses points {spread:.3e} apart "
                    f"(tol {coincidence_tol:.3e})")

    # global indices ordered by first occurrence
    order = {}
    glob = np.empty(len(pts), dtype=int)
    for i, r in enumerate(roots):
        if r not in order:
            order[r] = len(order)
        glob[i] = order[r]
    N = len(order)

    global_cp = np.zeros((N, 3))
    counts = np.zeros(N)
    np.add.at(global_cp, glob, pts)
    np.add.at(counts, glob, 1.0)
    global_cp /= counts[:, None]

    global_index = []
    off = 0
    for p in patches:
        ns, nt = p.shape
        global_index.append(glob[off: off + ns * nt].reshape(ns, nt).copy())
        off += ns * nt
    return ScatteringModel(patches, tuple(names), tuple(global_index),
                           global_cp, coincidence_tol)


@dataclass(frozen=True)
class CollocationSet:
    """N collocation points aligned with the global unknown indices.

    entries[nu] = (patch index, s, t) of one Greville preimage; param_preimages
    lists all merged (patch, s, t) preimages, used for singular detection.
    """

    entries: tuple
    points: np.ndarray
    param_preimages: tuple

    @property
    def count(self):
        return len(self.entries)


def collocation_points(model: ScatteringModel) -> CollocationSet:
    """Greville tensor-product points, merged across patch intersections.

    The Greville point of a control point shared between patches must land on
    the shared surface position from every adjacent patch; a mismatch reports
    the offending patch pair.
    """
    grev = []
    for patch in model.patches:
        grev.append((nurbs.greville_abscissae(patch.knots_s),
                     nurbs.greville_abscissae(patch.knots_t)))

    entries = [None] * model.N
    pre = [[] for _ in range(model.N)]
    pos = [None] * model.N
    for p, patch in enumerate(model.patches):
        xs, xt = grev[p]
        gidx = model.global_index[p]
        ns, nt = gidx.shape
        S, T = np.meshgrid(xs, xt, indexing="ij")
        pts = nurbs.eval_surface_many(patch, S.ravel(), T.ravel(), nders=0)["y"]
        pts = pts.reshape(ns, nt, 3)
        for k in range(ns):
            for l in range(nt):
                nu = gidx[k, l]
                pre[nu].append((p, xs[k], xt[l]))
                if entries[nu] is None:
                    entries[nu] = (p, xs[k], xt[l])
                    pos[nu] = pts[k, l]
                elif np.linalg.norm(pts[k, l] - pos[nu]) > model.coincidence_tol:
                    raise TopologyError(
                        f"collocation points of unknown {nu} disagree between "
                        f"patches {model.patch_names[entries[nu][0]]} and "
                        f"{model.patch_names[p]}")
    return CollocationSet(tuple(entries), np.array(pos), tuple(map(tuple, pre)))


def refine_for_analysis(model: ScatteringModel, insertions):
    """Knot-insert every patch for analysis; returns (refined model, M) where
    M is the sparse linear map from coarse to refined global control points.

    insertions maps patch name (or index) to (new_knots_s, new_knots_t).
    """
    refined = []
    maps = []
    for p, patch in enumerate(model.patches):
        key = model.patch_names[p] if model.patch_names[p] in _as_dict(insertions) else p
        new_s, new_t = _as_dict(insertions).get(key, ((), ()))
        Ts, kv_s = nurbs.refinement_matrix(patch.knots_s, new_s)
        Tt, kv_t = nurbs.refinement_matrix(patch.knots_t, new_t)
        Pw = patch.homogeneous()
        Pw_new = np.einsum("ik,klc,jl->ijc", Ts, Pw, Tt)
        w_new = Pw_new[..., 3]
        cp_new = Pw_new[..., :3] / w_new[..., None]
        refined.append(nurbs.NurbsPatch(kv_s, kv_t, cp_new, w_new))
        # position map: C'_kl = sum_ab Ts[k,a] Tt[l,b] w_ab C_ab / w'_kl
        maps.append((Ts, Tt, patch.weights, w_new))

    ref_model = unify_control_points(refined, model.coincidence_tol,
                                     model.patch_names)
    M = sparse.lil_matrix((ref_model.N, model.N))
    done = np.zeros(ref_model.N, dtype=bool)
    for p in range(len(refined)):
        Ts, Tt, w, w_new = maps[p]
        gi_c = model.global_index[p]
        gi_r = ref_model.global_index[p]
        ns_r, nt_r = gi_r.shape
        coef = np.einsum("ka,lb,ab->klab", Ts, Tt, w) / w_new[..., None, None]
        for k in range(ns_r):
            for l in range(nt_r):
                nu = gi_r[k, l]
                if done[nu]:
                    continue
                done[nu] = True
                block = coef[k, l]
                for (a, b) in zip(*np.nonzero(np.abs(block) > 1e-15)):
                    M[nu, gi_c[a, b]] += block[a, b]
    return ref_model, M.tocsr()


def _as_dict(insertions):
    return insertions if isinstance(insertions, dict) else dict(insertions)


@dataclass(frozen=True)
class DesignSpace:
    """Per-coordinate design description over the 3N coarse coordinates.

    Fixed coordinates carry lower = upper = initial.
    """

    free_mask: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        if np.any(self.lower > self.initial) or np.any(self.initial > self.upper):
            raise ValueError("bounds must satisfy lower <= initial <= upper")
        fixed = ~self.free_mask
        if np.any(self.lower[fixed] != self.upper[fixed]):
            raise ValueError("fixed coordinates must have lower == upper")

    @classmethod
    def from_free_list(cls, model: ScatteringModel, free):
        """free: iterable of (cp index, coord index, lower offset, upper offset)."""
        x0 = model.global_cp.ravel().copy()
        mask = np.zeros(3 * model.N, dtype=bool)
        lo, hi = x0.copy(), x0.copy()
        for (nu, c, dlo, dhi) in free:
            i = 3 * nu + c
            mask[i] = True
            lo[i] = x0[i] + dlo
            hi[i] = x0[i] + dhi
        return cls(mask, lo, hi, x0)

    @property
    def n_free(self):
        return int(self.free_mask.sum())


def apply_design(model: ScatteringModel, x: np.ndarray,
                 design: DesignSpace | None = None) -> ScatteringModel:
    """Move the global control points to the design vector x (3N,)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (3 * model.N,):
        raise ValueError(f"design vector must have length {3 * model.N}")
    if design is not None:
        if np.any(x < design.lower - 1e-12) or np.any(x > design.upper + 1e-12):
            raise ValueError("design vector violates bounds")
    return model.with_global_cp(x.reshape(model.N, 3))
