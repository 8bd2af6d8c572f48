"""B-spline/NURBS primitives: clamped knot vectors, Cox-de Boor basis with
derivatives, Greville abscissae, tensor-product surface evaluation and knot
insertion.

All evaluation routines are vectorised over arrays of parameters; patches are
immutable after construction and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARAM_TOL = 1e-14  # parameters this close to [0,1] endpoints are clamped


class DegenerateGeometryError(ValueError):
    """Raised when the surface Jacobian vanishes at an evaluation point."""

    def __init__(self, s, t):
        super().__init__(f"degenerate surface frame (J=0) at (s,t)=({s},{t})")
        self.s = s
        self.t = t


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot vector for a B-spline basis of given degree.

    len(knots) == n + degree + 1 where n is the number of basis functions.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        p, U = self.degree, self.knots
        if p < 0:
            raise ValueError("degree must be nonnegative")
        if self.n < p + 1:
            raise ValueError(f"need at least degree+1={p + 1} basis functions, got {self.n}")
        if np.any(np.diff(U) < 0):
            raise ValueError("knots must be non-decreasing")
        if np.any(U[: p + 1] != U[0]) or np.any(U[-(p + 1):] != U[-1]):
            raise ValueError("knot vector must be clamped (end knots repeated degree+1 times)")
        if U[0] != 0.0 or U[-1] != 1.0:
            raise ValueError("knot vector must span [0, 1]")

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return len(self.knots) - self.degree - 1

    def interior_knots(self) -> np.ndarray:
        """Distinct interior knot values (Bezier-cell breakpoints excluded endpoints)."""
        p = self.degree
        return np.unique(self.knots[p + 1: self.n])

    def breakpoints(self) -> np.ndarray:
        """Distinct knot values including 0 and 1 (cell boundaries)."""
        return np.unique(self.knots)


def clamped_uniform_knots(degree: int, n: int) -> KnotVector:
    """Clamped uniform knot vector: 0 repeated degree+1 times, interior knots
    (i-degree)/(n-degree), then 1 repeated degree+1 times."""
    p = degree
    if n < p + 1:
        raise ValueError(f"n={n} must be at least degree+1={p + 1}")
    interior = [(i - p) / (n - p) for i in range(p + 1, n)]
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)


def _clamp_params(u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u < -PARAM_TOL) or np.any(u > 1.0 + PARAM_TOL):
        bad = u[(u < -PARAM_TOL) | (u > 1.0 + PARAM_TOL)]
        raise ValueError(f"parameter outside [0,1]: {bad[:5]}")
    return np.clip(u, 0.0, 1.0)


def find_span(kv: KnotVector, u: np.ndarray) -> np.ndarray:
    """Knot span index i such that knots[i] <= u < knots[i+1] (vectorised)."""
    p, n = kv.degree, kv.n
    spans = np.searchsorted(kv.knots, u, side="right") - 1
    return np.clip(spans, p, n - 1)


def basis_and_derivs(kv: KnotVector, u, nders: int = 2):
    """Nonzero B-spline basis functions and derivatives at parameters u.

    Returns (spans, ders) with spans shape (m,) and ders shape
    (m, nders+1, degree+1); ders[:, d, j] is the d-th derivative of basis
    function ``spans - degree + j``.
    """
    u = _clamp_params(u)
    p = kv.degree
    U = kv.knots
    m = len(u)
    spans = find_span(kv, u)

    ndu = np.ones((m, p + 1, p + 1))
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = u - U[spans + 1 - j]
        right[:, j] = U[spans + j] - u
        saved = np.zeros(m)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    nd = min(nders, p)
    ders = np.zeros((m, nders + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]

    # derivative table (The NURBS Book, A2.3), vectorised over points
    a = np.zeros((m, 2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:, :, :] = 0.0
        a[:, 0, 0] = 1.0
        for k in range(1, nd + 1):
            d = np.zeros(m)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1

    # multiply through by the factorial factors
    r = p
    for k in range(1, nd + 1):
        ders[:, k, :] *= r
        r *= p - k
    return spans, ders


def bspline_basis(kv: KnotVector, k: int, u: float):
    """Single basis function N_k and its first/second derivatives at u."""
    if not 0 <= k < kv.n:
        raise ValueError(f"basis index {k} out of range [0,{kv.n})")
    spans, ders = basis_and_derivs(kv, [u], nders=2)
    j = k - (int(spans[0]) - kv.degree)
    if 0 <= j <= kv.degree:
        return ders[0, 0, j], ders[0, 1, j], ders[0, 2, j]
    return 0.0, 0.0, 0.0


def greville_abscissae(kv: KnotVector) -> np.ndarray:
    """Collocation parameters: averages of degree consecutive interior knots."""
    p, n = kv.degree, kv.n
    if p == 0:
        raise ValueError("Greville abscissae undefined for degree 0")
    xi = np.array([kv.knots[k + 1: k + p + 1].sum() / p for k in range(n)])
    xi[0], xi[-1] = 0.0, 1.0
    return xi


@dataclass(frozen=True)
class NurbsPatch:
    """Tensor-product NURBS surface patch on [0,1]^2.

    control_points has shape (ns, nt, 3); weights has shape (ns, nt) and must
    be strictly positive.
    """

    knots_s: KnotVector
    knots_t: KnotVector
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if cp.shape != (self.knots_s.n, self.knots_t.n, 3):
            raise ValueError(
                f"control grid shape {cp.shape} does not match basis counts "
                f"({self.knots_s.n}, {self.knots_t.n}, 3)")
        if w.shape != cp.shape[:2]:
            raise ValueError("weights shape must match control grid")
        if np.any(w <= 0):
            raise ValueError("all weights must be strictly positive")
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    @property
    def shape(self):
        return self.control_points.shape[:2]

    def homogeneous(self) -> np.ndarray:
        """(ns, nt, 4) array of (w*x, w*y, w*z, w)."""
        Pw = np.empty(self.control_points.shape[:2] + (4,))
        Pw[..., :3] = self.control_points * self.weights[..., None]
        Pw[..., 3] = self.weights
        return Pw


@dataclass(frozen=True)
class SurfaceFrame:
    """Point, tangents, unit normal and Jacobian of a surface evaluation."""

    point: np.ndarray
    tangent_s: np.ndarray
    tangent_t: np.ndarray
    normal: np.ndarray
    jacobian: float


def eval_surface_many(patch: NurbsPatch, s, t, nders: int = 1) -> dict:
    """Evaluate the rational surface at arrays of parameters.

    Returns a dict with keys: y, ys, yt, normal, jac and, when nders >= 2,
    yss, yst, ytt.  Shapes are (m, 3) for vectors and (m,) for jac.
    """
    s = _clamp_params(s)
    t = _clamp_params(t)
    if s.shape != t.shape:
        raise ValueError("s and t must have equal shapes")
    ps, pt = patch.knots_s.degree, patch.knots_t.degree
    span_s, Ns = basis_and_derivs(patch.knots_s, s, nders=nders)
    span_t, Nt = basis_and_derivs(patch.knots_t, t, nders=nders)

    Pw = patch.homogeneous()
    idx_s = (span_s[:, None] - ps) + np.arange(ps + 1)[None, :]
    idx_t = (span_t[:, None] - pt) + np.arange(pt + 1)[None, :]
    # local homogeneous control blocks, shape (m, ps+1, pt+1, 4)
    local = Pw[idx_s[:, :, None], idx_t[:, None, :]]

    def hom(ds, dt):
        return np.einsum("ma,mb,mabc->mc", Ns[:, ds, :], Nt[:, dt, :], local)

    A0 = hom(0, 0)
    W0 = A0[:, 3]
    y = A0[:, :3] / W0[:, None]
    out = {"y": y}
    if nders >= 1:
        A10, A01 = hom(1, 0), hom(0, 1)
        ys = (A10[:, :3] - A10[:, 3:4] * y) / W0[:, None]
        yt = (A01[:, :3] - A01[:, 3:4] * y) / W0[:, None]
        cross = np.cross(ys, yt)
        jac = np.linalg.norm(cross, axis=1)
        out.update(ys=ys, yt=yt, jac=jac)
        with np.errstate(invalid="ignore", divide="ignore"):
            out["normal"] = np.where(jac[:, None] > 0, cross / jac[:, None], 0.0)
    if nders >= 2:
        A20, A11, A02 = hom(2, 0), hom(1, 1), hom(0, 2)
        ys, yt = out["ys"], out["yt"]
        yss = (A20[:, :3] - 2 * A10[:, 3:4] * ys - A20[:, 3:4] * y) / W0[:, None]
        yst = (A11[:, :3] - A10[:, 3:4] * yt - A01[:, 3:4] * ys - A11[:, 3:4] * y) / W0[:, None]
        ytt = (A02[:, :3] - 2 * A01[:, 3:4] * yt - A02[:, 3:4] * y) / W0[:, None]
        out.update(yss=yss, yst=yst, ytt=ytt)
    return out


def eval_surface(patch: NurbsPatch, s: float, t: float) -> SurfaceFrame:
    """Evaluate a single surface frame; raises DegenerateGeometryError if J=0."""
    r = eval_surface_many(patch, [s], [t], nders=1)
    jac = float(r["jac"][0])
    if jac <= 0.0 or not np.isfinite(jac):
        raise DegenerateGeometryError(s, t)
    return SurfaceFrame(
        point=r["y"][0], tangent_s=r["ys"][0], tangent_t=r["yt"][0],
        normal=r["normal"][0], jacobian=jac)


def rational_basis_many(patch: NurbsPatch, s, t):
    """Rational basis values and parametric derivatives at arrays of parameters.

    Returns (idx, R, Rs, Rt): idx has shape (m, (ps+1)*(pt+1)) with flattened
    local control-point indices k*nt + l; R, Rs, Rt hold the corresponding
    basis values/derivatives.
    """
    s = _clamp_params(s)
    t = _clamp_params(t)
    ps, pt = patch.knots_s.degree, patch.knots_t.degree
    nt = patch.knots_t.n
    span_s, Ns = basis_and_derivs(patch.knots_s, s, nders=1)
    span_t, Nt = basis_and_derivs(patch.knots_t, t, nders=1)
    idx_s = (span_s[:, None] - ps) + np.arange(ps + 1)[None, :]
    idx_t = (span_t[:, None] - pt) + np.arange(pt + 1)[None, :]
    wloc = patch.weights[idx_s[:, :, None], idx_t[:, None, :]]  # (m, ps+1, pt+1)

    num = wloc * Ns[:, 0, :, None] * Nt[:, 0, None, :]
    num_s = wloc * Ns[:, 1, :, None] * Nt[:, 0, None, :]
    num_t = wloc * Ns[:, 0, :, None] * Nt[:, 1, None, :]
    W = num.sum(axis=(1, 2))
    Ws = num_s.sum(axis=(1, 2))
    Wt = num_t.sum(axis=(1, 2))
    R = num / W[:, None, None]
    Rs = (num_s - R * Ws[:, None, None]) / W[:, None, None]
    Rt = (num_t - R * Wt[:, None, None]) / W[:, None, None]

    m = len(s)
    idx = (idx_s[:, :, None] * nt + idx_t[:, None, :]).reshape(m, -1)
    return idx, R.reshape(m, -1), Rs.reshape(m, -1), Rt.reshape(m, -1)


def rational_geometry(patch: NurbsPatch, s, t):
    """Basis and surface frame in one pass (one basis evaluation per
    direction), for quadrature hot loops.

    Returns a dict with idx, R (as in rational_basis_many) plus y, normal
    (unit) and jac at every parameter point.
    """
    idx, R, Rs, Rt = rational_basis_many(patch, s, t)
    cp = patch.control_points.reshape(-1, 3)[idx]  # (m, nact, 3)
    y = np.einsum("ma,mai->mi", R, cp)
    ys = np.einsum("ma,mai->mi", Rs, cp)
    yt = np.einsum("ma,mai->mi", Rt, cp)
    nrm = np.cross(ys, yt)
    jac = np.linalg.norm(nrm, axis=1)
    return {"idx": idx, "R": R, "y": y, "jac": jac,
            "normal": nrm / np.maximum(jac, 1e-300)[:, None]}


def _insertion_coeffs(kv: KnotVector, u: float):
    """Single-knot insertion matrix T (n+1 x n) and the new knot vector."""
    p, n, U = kv.degree, kv.n, kv.knots
    if not 0.0 < u < 1.0:
        raise ValueError("inserted knot must lie in (0,1)")
    if np.count_nonzero(np.isclose(U, u)) >= p:
        raise ValueError(f"inserting {u} would raise multiplicity beyond degree {p}")
    span = int(find_span(kv, np.array([u]))[0])
    T = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= span - p:
            T[i, i] = 1.0
        elif i <= span:
            alpha = (u - U[i]) / (U[i + p] - U[i])
            T[i, i] = alpha
            T[i, i - 1] = 1.0 - alpha
        else:
            T[i, i - 1] = 1.0
    new_knots = np.insert(U, span + 1, u)
    return T, KnotVector(p, new_knots)


def refinement_matrix(kv: KnotVector, new_knots) -> tuple[np.ndarray, KnotVector]:
    """Composite insertion matrix for a sequence of new knots."""
    T = np.eye(kv.n)
    cur = kv
    for u in sorted(new_knots):
        T1, cur = _insertion_coeffs(cur, u)
        T = T1 @ T
    return T, cur


def insert_knot(patch: NurbsPatch, direction: str, u: float) -> NurbsPatch:
    """Insert one knot without changing the surface geometry.

    The transformation acts on homogeneous (weighted) coordinates, which is
    exact for rational surfaces.
    """
    return refine_patch(patch,
                        [u] if direction == "s" else [],
                        [u] if direction == "t" else [])


def refine_patch(patch: NurbsPatch, new_s, new_t) -> NurbsPatch:
    """Insert several knots in each direction (geometry preserved)."""
    Ts, kv_s = refinement_matrix(patch.knots_s, new_s)
    Tt, kv_t = refinement_matrix(patch.knots_t, new_t)
    Pw = patch.homogeneous()
    Pw_new = np.einsum("ik,klc,jl->ijc", Ts, Pw, Tt)
    w_new = Pw_new[..., 3]
    cp_new = Pw_new[..., :3] / w_new[..., None]
    return NurbsPatch(kv_s, kv_t, cp_new, w_new)


def quarter_circle_patch() -> NurbsPatch:
    """Degree-2 rational strip whose t=const curves are exact unit quarter arcs
    in the xy-plane, extruded along z.  Used in tests."""
    kv2 = clamped_uniform_knots(2, 3)
    kv1 = clamped_uniform_knots(1, 2)
    arc = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    w_arc = np.array([1.0, np.sqrt(2) / 2, 1.0])
    cp = np.zeros((3, 2, 3))
    w = np.zeros((3, 2))
    for k in range(3):
        for l in range(2):
            cp[k, l] = [arc[k, 0], arc[k, 1], float(l)]
            w[k, l] = w_arc[k]
    return NurbsPatch(kv2, kv1, cp, w)
