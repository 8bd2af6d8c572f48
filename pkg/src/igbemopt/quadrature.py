"""Quadrature on parameter rectangles: tensor Gauss-Legendre rules, a
Lachat-style triangle/degenerate-map treatment of singular integrals and
quadtree subdivision for nearly singular integrals.

Integrands are callables f(s, t) -> ndarray of shape (m,) or (m, k) taking
flat parameter arrays; they must include all Jacobian factors of the surface
map themselves.  The routines here only supply the parameter-space measure.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import nurbs

SINGULAR_RTOL = 1e-7


class AccuracyWarning(UserWarning):
    """A singular/near-singular integral did not reach the target tolerance."""


@dataclass(frozen=True)
class QuadRule:
    """Tensor Gauss-Legendre rule on the unit square; weights sum to 1."""

    nodes: np.ndarray   # (m, 2)
    weights: np.ndarray  # (m,)


@dataclass(frozen=True)
class SubdivisionPolicy:
    """Controls singular and near-singular refinement.

    A cell is refined while (cell diameter) / (distance to the collocation
    point) exceeds distance_ratio, up to max_depth levels; singular integrals
    are refined until successive depths agree to SINGULAR_RTOL.
    """

    base_order: int = 4
    distance_ratio: float = 1.0
    max_depth: int = 8

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.distance_ratio <= 0:
            raise ValueError("distance_ratio must be positive")


@lru_cache(maxsize=None)
def gauss_1d(order: int):
    """Gauss-Legendre nodes/weights on [0, 1]; weights sum to 1."""
    if not 1 <= order <= 64:
        raise ValueError("Gauss order must be in [1, 64]")
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def gauss_rule(order: int) -> QuadRule:
    """Tensor-product Gauss-Legendre rule on [0,1]^2 (order^2 points)."""
    x, w = gauss_1d(order)
    s, t = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    return QuadRule(np.column_stack([s.ravel(), t.ravel()]),
                    (ws * wt).ravel())


def rule_on_rect(rule: QuadRule, rect):
    """Map a unit-square rule onto rect = (s0, s1, t0, t1)."""
    s0, s1, t0, t1 = rect
    s = s0 + rule.nodes[:, 0] * (s1 - s0)
    t = t0 + rule.nodes[:, 1] * (t1 - t0)
    return s, t, rule.weights * (s1 - s0) * (t1 - t0)


def integrate_regular(integrand, rect, rule: QuadRule):
    """Plain tensor Gauss integration of integrand over rect."""
    s, t, w = rule_on_rect(rule, rect)
    vals = np.asarray(integrand(s, t))
    return np.tensordot(w, vals, axes=(0, 0))


def _lachat_triangles(rect, spoint):
    """Fan of non-degenerate triangles apexed at spoint covering rect."""
    s0, s1, t0, t1 = rect
    a = np.array([min(max(spoint[0], s0), s1), min(max(spoint[1], t0), t1)])
    corners = [np.array([s0, t0]), np.array([s1, t0]),
               np.array([s1, t1]), np.array([s0, t1])]
    area_tol = 1e-14 * (s1 - s0) * (t1 - t0)
    tris = []
    for i in range(4):
        b, c = corners[i], corners[(i + 1) % 4]
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area2) > area_tol:
            tris.append((a, b, c, area2))
    return tris


def _triangle_points(tris, order: int):
    """Duffy-mapped Gauss points of a triangle fan, order^2 per triangle.

    The map (xi, eta) -> A + xi[(1-eta)(B-A) + eta(C-A)] collapses xi=0 onto
    the apex A; its Jacobian xi*|area2| cancels a 1/r singularity there.
    """
    xi, wxi = gauss_1d(order)
    ss, tt, ww = [], [], []
    for a, b, c, area2 in tris:
        XI = xi[:, None]
        ETA = xi[None, :]
        s = a[0] + XI * ((1 - ETA) * (b[0] - a[0]) + ETA * (c[0] - a[0]))
        t = a[1] + XI * ((1 - ETA) * (b[1] - a[1]) + ETA * (c[1] - a[1]))
        wq = wxi[:, None] * wxi[None, :] * XI * abs(area2)
        ss.append(s.ravel())
        tt.append(t.ravel())
        ww.append(wq.ravel())
    return np.concatenate(ss), np.concatenate(tt), np.concatenate(ww)


def integrate_singular(integrand, rect, spoint, policy: SubdivisionPolicy):
    """Integrate a 1/r-singular integrand with the singular parameter point
    spoint inside or on the boundary of rect.

    The Gauss order on the mapped (smooth) integrand is escalated until
    successive orders agree to SINGULAR_RTOL.  When the error stops decaying
    between orders (the mapped integrand is not smooth, e.g. at a patch edge
    with a normal jump), the highest order is evaluated directly.
    """
    tris = _lachat_triangles(rect, spoint)
    if not tris:  # zero-area rect
        return 0.0

    def eval_order(order):
        s, t, w = _triangle_points(tris, order)
        return np.tensordot(w, np.asarray(integrand(s, t)), axes=(0, 0))

    order = max(policy.base_order, 4)
    prev = eval_order(order)
    val = prev
    converged = False
    prev_err = None
    for _ in range(policy.max_depth):
        order = min(order + 8, 64)
        val = eval_order(order)
        err = np.max(np.abs(val - prev))
        if err <= SINGULAR_RTOL * max(np.max(np.abs(val)), 1e-30):
            converged = True
            break
        if prev_err is not None and err > 0.3 * prev_err and order < 64:
            # The error barely decays between orders: the kernel is more
            # singular than the triangle map regularizes (collocation point
            # on a patch edge seen from a non-coplanar neighbour), so the
            # ladder cannot reach the tolerance.  Take the highest-order
            # estimate directly instead of climbing to it.
            prev = val
            val = eval_order(64)
            err = np.max(np.abs(val - prev))
            converged = err <= SINGULAR_RTOL * max(np.max(np.abs(val)), 1e-30)
            break
        prev = val
        prev_err = err
    if not converged:
        warnings.warn("singular integral did not converge at max order",
                      AccuracyWarning, stacklevel=2)
    return val


def _cell_geometry(patch: nurbs.NurbsPatch, rects):
    """Physical centers and radii (center-to-corner) of parameter rects."""
    rects = np.asarray(rects, dtype=float)
    s0, s1, t0, t1 = rects.T
    sc, tc = (s0 + s1) / 2, (t0 + t1) / 2
    S = np.concatenate([sc, s0, s1, s0, s1])
    T = np.concatenate([tc, t0, t0, t1, t1])
    pts = nurbs.eval_surface_many(patch, S, T, nders=0)["y"]
    n = len(rects)
    centers = pts[:n]
    corners = pts[n:].reshape(4, n, 3)
    radii = np.max(np.linalg.norm(corners - centers[None, :, :], axis=2), axis=0)
    return centers, radii


def near_singular_leaves(patch, rect, x, policy: SubdivisionPolicy,
                         geo_cache: dict | None = None):
    """Quadtree leaf rects for integration near collocation point x.

    geo_cache, if given, memoises rect centers/radii across calls for the
    same patch (they do not depend on x).
    """
    x = np.asarray(x, dtype=float)
    leaves = []
    level = [tuple(rect)]
    for depth in range(policy.max_depth + 1):
        if not level:
            break
        if geo_cache is None:
            centers, radii = _cell_geometry(patch, level)
        else:
            fresh = [r for r in level if r not in geo_cache]
            if fresh:
                fc, fr = _cell_geometry(patch, fresh)
                for r, c, rad in zip(fresh, fc, fr):
                    geo_cache[r] = (c, rad)
            centers = np.array([geo_cache[r][0] for r in level])
            radii = np.array([geo_cache[r][1] for r in level])
        dist = np.maximum(np.linalg.norm(centers - x, axis=1) - radii,
                          1e-12 * np.maximum(radii, 1e-30))
        refine = (2 * radii / dist > policy.distance_ratio) & (depth < policy.max_depth)
        nxt = []
        for (r, f) in zip(level, refine):
            if not f:
                leaves.append(r)
                continue
            s0, s1, t0, t1 = r
            sm, tm = (s0 + s1) / 2, (t0 + t1) / 2
            nxt += [(s0, sm, t0, tm), (sm, s1, t0, tm),
                    (s0, sm, tm, t1), (sm, s1, tm, t1)]
        level = nxt
    return leaves


def integrate_near_singular(integrand, rect, patch, x, policy: SubdivisionPolicy):
    """Quadtree-subdivided Gauss integration for a collocation point x that is
    close to (but not on) the element."""
    leaves = near_singular_leaves(patch, rect, x, policy)
    rule = gauss_rule(policy.base_order)
    ss, tt, ww = [], [], []
    for r in leaves:
        s, t, w = rule_on_rect(rule, r)
        ss.append(s)
        tt.append(t)
        ww.append(w)
    s = np.concatenate(ss)
    t = np.concatenate(tt)
    w = np.concatenate(ww)
    vals = np.asarray(integrand(s, t))
    return np.tensordot(w, vals, axes=(0, 0))


def surface_measure_integrand(patch: nurbs.NurbsPatch, func=None):
    """Build an integrand including the surface Jacobian.

    func(geom) may use geom['y'], geom['normal'], ...; omitted func integrates
    the surface measure itself (areas).
    """
    def integrand(s, t):
        geom = nurbs.eval_surface_many(patch, s, t, nders=1)
        vals = 1.0 if func is None else func(geom)
        return vals * geom["jac"]
    return integrand
