"""Scene definitions: multi-patch geometries, incident field, observation
points, design space and analysis refinement, with JSON persistence.

Shipped builders: six-patch quartic sphere, unit cube, reflector (1 x 1 x 0.5),
resonator (3 x 3 x 3 cube with a 1 x 1 x 2 hollow) and a bending-duct block
(3 x 3 x 5).  Voxel-style solids are assembled from axis-aligned cells; every
exposed cell face becomes one clamped patch, so coincident control points on
cell borders unify into shared global unknowns.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import model as model_mod
from . import nurbs
from .kernels import IncidentField

_COORDS = {"x": 0, "y": 1, "z": 2}


@dataclass
class Scene:
    name: str
    patches: list
    patch_names: list
    incident: IncidentField
    observation_points: np.ndarray
    design: dict
    refinement: dict          # patch name -> (knots_s, knots_t) to insert
    coincidence_tol: float | None = None

    def build_model(self) -> model_mod.ScatteringModel:
        return model_mod.unify_control_points(
            self.patches, self.coincidence_tol, self.patch_names)

    def design_space(self, mdl: model_mod.ScatteringModel) -> model_mod.DesignSpace:
        if self.design.get("mode", "cp") == "radial":
            # single-parameter radius mode; box bounds live on the radius
            x0 = mdl.global_cp.ravel()
            return model_mod.DesignSpace(
                np.zeros(3 * mdl.N, dtype=bool), x0.copy(), x0.copy(), x0.copy())
        free = [(e["cp"], _COORDS[e["coord"]], e["lower"], e["upper"])
                for e in self.design.get("free", [])]
        return model_mod.DesignSpace.from_free_list(mdl, free)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "name": scene.name,
        "patches": [
            {
                "name": nm,
                "degree_s": p.knots_s.degree,
                "degree_t": p.knots_t.degree,
                "knots_s": p.knots_s.knots.tolist(),
                "knots_t": p.knots_t.knots.tolist(),
                "control_points": p.control_points.tolist(),
                "weights": p.weights.tolist(),
            }
            for nm, p in zip(scene.patch_names, scene.patches)
        ],
        "incident": {
            "type": "planewave",
            "direction": scene.incident.direction.tolist(),
            "wavenumber": scene.incident.wavenumber,
        },
        "observation_points": np.asarray(scene.observation_points).tolist(),
        "design": scene.design,
        "refinement": {
            nm: {"s": list(map(float, ks)), "t": list(map(float, kt))}
            for nm, (ks, kt) in scene.refinement.items()
        },
        "coincidence_tol": scene.coincidence_tol,
    }


def scene_from_dict(d: dict) -> Scene:
    patches, names = [], []
    for pd in d["patches"]:
        names.append(pd["name"])
        patches.append(nurbs.NurbsPatch(
            nurbs.KnotVector(pd["degree_s"], np.array(pd["knots_s"])),
            nurbs.KnotVector(pd["degree_t"], np.array(pd["knots_t"])),
            np.array(pd["control_points"]),
            np.array(pd["weights"])))
    inc = d["incident"]
    if inc.get("type", "planewave") != "planewave":
        raise ValueError(f"unsupported incident field type {inc['type']!r}")
    return Scene(
        name=d.get("name", "scene"),
        patches=patches,
        patch_names=names,
        incident=IncidentField(np.array(inc["direction"]), float(inc["wavenumber"])),
        observation_points=np.asarray(d.get("observation_points", []), dtype=float),
        design=d.get("design", {"mode": "cp", "free": []}),
        refinement={nm: (r.get("s", []), r.get("t", []))
                    for nm, r in d.get("refinement", {}).items()},
        coincidence_tol=d.get("coincidence_tol"),
    )


def save_scene(scene: Scene, path):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))


# ----------------------------------------------------------------------------
# six-patch quartic sphere
# ----------------------------------------------------------------------------

@lru_cache(maxsize=1)
def sphere_face_data():
    """Quartic rational patch covering one face of the spherical cube.

    Obtained by a homogeneous least-squares fit of the gnomonic face map
    normalize(2s-1, 2t-1, 1) sampled on a grid: the nullspace direction of the
    sampling matrix gives weighted control points reproducing the unit sphere
    to ~5e-5 in radius.  The result is symmetrised under the dihedral group of
    the face so shared edges of adjacent faces carry identical data.
    """
    kv = nurbs.clamped_uniform_knots(4, 5)
    m = 25
    ss = np.linspace(0.0, 1.0, m)
    spans, ders = nurbs.basis_and_derivs(kv, ss, nders=0)
    B1 = np.zeros((m, 5))
    for i in range(m):
        B1[i, spans[i] - 4: spans[i] + 1] = ders[i, 0]

    S, T = np.meshgrid(ss, ss, indexing="ij")
    F = np.stack([2 * S - 1, 2 * T - 1, np.ones_like(S)], axis=-1)
    F /= np.linalg.norm(F, axis=-1, keepdims=True)
    B2 = np.einsum("ik,jl->ijkl", B1, B1).reshape(m * m, 25)
    Ff = F.reshape(-1, 3)

    A = np.zeros((3 * m * m, 100))
    for c in range(3):
        A[c * m * m:(c + 1) * m * m, c * 25:(c + 1) * 25] = B2
        A[c * m * m:(c + 1) * m * m, 75:100] = -Ff[:, c: c + 1] * B2
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    h = Vt[-1].reshape(4, 5, 5)
    if h[3].sum() < 0:
        h = -h
    w = h[3]
    cp = np.moveaxis(h[:3], 0, -1) / w[..., None]

    # symmetrise over the dihedral group of the square face
    def sym(arr, vec):
        acc = np.zeros_like(arr)
        ops = [(lambda a: a, 1, 1),
               (lambda a: a[::-1, :], -1, 1),
               (lambda a: a[:, ::-1], 1, -1),
               (lambda a: a[::-1, ::-1], -1, -1)]
        for op, sx, sy in ops:
            t = op(arr).copy()
            if vec:
                t[..., 0] *= sx
                t[..., 1] *= sy
            acc += t
            tt = np.swapaxes(t, 0, 1).copy()
            if vec:
                tt[..., [0, 1]] = tt[..., [1, 0]]
            acc += tt
        return acc / 8.0

    cp = sym(cp, True)
    w = sym(w, False)
    w = w / w[0, 0]

    # snap boundary rows onto the symmetry planes of the patch-to-patch edges
    # (s=1 edge lies on x=z, s=0 on x=-z, t=1 on y=z, t=0 on y=-z), so the
    # rotated copies of adjacent faces carry bit-identical shared edges
    for row, (ca, cb, sign) in [((-1, slice(None)), (0, 2, 1.0)),
                                ((0, slice(None)), (0, 2, -1.0)),
                                ((slice(None), -1), (1, 2, 1.0)),
                                ((slice(None), 0), (1, 2, -1.0))]:
        r = cp[row]
        mean = (r[:, ca] + sign * r[:, cb]) / 2.0
        r[:, ca] = mean
        r[:, cb] = sign * mean
        cp[row] = r
    for i, sx in [(0, -1.0), (-1, 1.0)]:
        for j, sy in [(0, -1.0), (-1, 1.0)]:
            x, y, z = cp[i, j]
            v = (sx * x + sy * y + z) / 3.0
            cp[i, j] = (sx * v, sy * v, v)
    cp /= np.linalg.norm(cp[0, 0])  # corners exactly on the unit sphere
    return kv, cp, w


_SPHERE_ROTATIONS = {
    "zp": np.eye(3),
    "zm": np.diag([1.0, -1.0, -1.0]),
    "xp": np.array([[0.0, 0, 1], [0, 1, 0], [-1, 0, 0]]),
    "xm": np.array([[0.0, 0, -1], [0, 1, 0], [1, 0, 0]]),
    "yp": np.array([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]]),
    "ym": np.array([[1.0, 0, 0], [0, 0, 1], [0, -1, 0]]),
}


def sphere_patches(radius: float = 1.0):
    """Six-patch quartic NURBS sphere of the given radius (98 unique CPs)."""
    kv, cp, w = sphere_face_data()
    patches, names = [], []
    for nm, R in _SPHERE_ROTATIONS.items():
        patches.append(nurbs.NurbsPatch(kv, kv, radius * cp @ R.T, w))
        names.append(nm)
    return patches, names


def uniform_insertions(kv: nurbs.KnotVector, target_n: int):
    """Knots to insert to grow a clamped uniform vector from n to target_n.

    Existing interior knots must survive, so (target_n - p) has to be a
    multiple of (n - p) whenever interior knots exist.
    """
    p, n = kv.degree, kv.n
    if target_n < n:
        raise ValueError("target basis count must not shrink")
    target = nurbs.clamped_uniform_knots(p, target_n)
    old = list(np.round(kv.interior_knots(), 12))
    new = []
    for u in np.round(target.interior_knots(), 12):
        if old and np.isclose(u, old[0]):
            old.pop(0)
        else:
            new.append(float(u))
    if old:
        raise ValueError(
            f"cannot refine n={n} to n={target_n} uniformly (old knots lost)")
    return new


def sphere_scene(radius: float = 3.0, wavenumber: float = 1.0,
                 n_refined: int = 13, lower: float = 1.0, upper: float = 7.0,
                 name: str = "sphere") -> Scene:
    """Sphere verification scene: radial design mode, observation at z=8.5."""
    patches, names = sphere_patches(radius)
    ins = uniform_insertions(patches[0].knots_s, n_refined)
    return Scene(
        name=name, patches=patches, patch_names=names,
        incident=IncidentField(np.array([0.0, 0.0, -1.0]), wavenumber),
        observation_points=np.array([[0.0, 0.0, 8.5]]),
        design={"mode": "radial", "lower": lower, "upper": upper,
                "initial": radius},
        refinement={nm: (ins, ins) for nm in names},
    )


# ----------------------------------------------------------------------------
# voxel solids (cube, reflector, resonator, duct)
# ----------------------------------------------------------------------------

def _face_patch(axis, sign, a_coord, b_lims, c_lims, nb, nc, degree):
    """One flat cell-face patch with outward normal sign*e_axis.

    Tangent axes (b, c) are the cyclic pair after axis; for negative faces the
    roles are swapped so that tangent_s x tangent_t points outward.
    """
    bax, cax = (axis + 1) % 3, (axis + 2) % 3
    if sign < 0:
        bax, cax, b_lims, c_lims, nb, nc = cax, bax, c_lims, b_lims, nc, nb
    bs = np.linspace(b_lims[0], b_lims[1], nb)
    cs = np.linspace(c_lims[0], c_lims[1], nc)
    cp = np.zeros((nb, nc, 3))
    cp[..., axis] = a_coord
    cp[..., bax] = bs[:, None]
    cp[..., cax] = cs[None, :]
    return nurbs.NurbsPatch(
        nurbs.clamped_uniform_knots(degree, nb),
        nurbs.clamped_uniform_knots(degree, nc),
        cp, np.ones((nb, nc)))


@dataclass
class VoxelSolid:
    """Axis-aligned cell complex: grid lines per axis plus cell occupancy."""

    lines: tuple          # (xs, ys, zs) arrays of grid coordinates
    occ: np.ndarray       # bool, shape (len(xs)-1, len(ys)-1, len(zs)-1)
    counts: tuple         # per-axis list of CP counts per interval
    refined_counts: tuple  # same structure, analysis resolution
    degree: int = 2

    def build(self):
        """Patches, names and refinement map for every exposed cell face."""
        lines = [np.asarray(l, dtype=float) for l in self.lines]
        occ = self.occ
        patches, names, refinement = [], [], {}
        shape = occ.shape
        for axis in range(3):
            bax, cax = (axis + 1) % 3, (axis + 2) % 3
            for idx in np.ndindex(shape):
                if not occ[idx]:
                    continue
                for sign in (1, -1):
                    nb_idx = list(idx)
                    nb_idx[axis] += sign
                    covered = (0 <= nb_idx[axis] < shape[axis]
                               and occ[tuple(nb_idx)])
                    if covered:
                        continue
                    face_pos = idx[axis] + (1 if sign > 0 else 0)
                    a_coord = lines[axis][face_pos]
                    b_i, c_i = idx[bax], idx[cax]
                    patch = _face_patch(
                        axis, sign, a_coord,
                        (lines[bax][b_i], lines[bax][b_i + 1]),
                        (lines[cax][c_i], lines[cax][c_i + 1]),
                        self.counts[bax][b_i], self.counts[cax][c_i],
                        self.degree)
                    nm = f"{'xyz'[axis]}{'p' if sign > 0 else 'm'}_{idx[0]}_{idx[1]}_{idx[2]}"
                    kb = uniform_insertions(
                        nurbs.clamped_uniform_knots(self.degree, self.counts[bax][b_i]),
                        self.refined_counts[bax][b_i])
                    kc = uniform_insertions(
                        nurbs.clamped_uniform_knots(self.degree, self.counts[cax][c_i]),
                        self.refined_counts[cax][c_i])
                    if sign < 0:
                        kb, kc = kc, kb
                    patches.append(patch)
                    names.append(nm)
                    refinement[nm] = (kb, kc)
        return patches, names, refinement


def select_cp_ids(mdl: model_mod.ScatteringModel, predicate):
    """Global CP indices whose position satisfies predicate(x, y, z)."""
    return [nu for nu, p in enumerate(mdl.global_cp) if predicate(*p)]


def cube_scene(wavenumber: float = 1e-4, n: int = 3, n_refined: int = 7,
               name: str = "cube") -> Scene:
    """Unit cube, no design variables; static-limit and free-term test scene."""
    solid = VoxelSolid(
        lines=([0.0, 1.0], [0.0, 1.0], [0.0, 1.0]),
        occ=np.ones((1, 1, 1), dtype=bool),
        counts=([n], [n], [n]),
        refined_counts=([n_refined], [n_refined], [n_refined]))
    patches, names, refinement = solid.build()
    return Scene(
        name=name, patches=patches, patch_names=names,
        incident=IncidentField(np.array([0.0, 0.0, -1.0]), wavenumber),
        observation_points=np.array([[0.5, 0.5, 3.0]]),
        design={"mode": "cp", "free": []},
        refinement=refinement)


def reflector_scene(wavenumber: float = 3.0, name: str = "reflector") -> Scene:
    """Cuboid reflector 1 x 1 x 0.5; 16 designed z-coordinates on the top face."""
    solid = VoxelSolid(
        lines=([0.0, 1.0], [0.0, 1.0], [0.0, 0.5]),
        occ=np.ones((1, 1, 1), dtype=bool),
        counts=([6], [6], [3]),
        refined_counts=([14], [14], [5]))
    patches, names, refinement = solid.build()
    scene = Scene(
        name=name, patches=patches, patch_names=names,
        incident=IncidentField(np.array([0.0, 0.0, -1.0]), wavenumber),
        observation_points=np.array([[0.5, 0.5, 1.0]]),
        design={"mode": "cp", "free": []},
        refinement=refinement)
    mdl = scene.build_model()
    eps = 1e-9
    ids = select_cp_ids(mdl, lambda x, y, z: (abs(z - 0.5) < eps
                                              and eps < x < 1 - eps
                                              and eps < y < 1 - eps))
    scene.design = {"mode": "cp",
                    "free": [{"cp": nu, "coord": "z", "lower": -0.3, "upper": 0.3}
                             for nu in sorted(ids)]}
    return scene


def resonator_scene(direction: str = "z", name: str | None = None) -> Scene:
    """3 x 3 x 3 cube with a 1 x 1 x 2 top hollow; 32 designed wall CPs.

    direction 'z' or 'x' selects the incident planewave (-z or -x travel).
    """
    solid = VoxelSolid(
        lines=([0.0, 1, 2, 3], [0.0, 1, 2, 3], [0.0, 1, 3]),
        occ=np.array([[[True] * 2] * 3] * 3),
        counts=([3, 3, 3], [3, 3, 3], [3, 6]),
        refined_counts=([5, 5, 5], [5, 5, 5], [5, 14]))
    solid.occ[1, 1, 1] = False  # the hollow
    patches, names, refinement = solid.build()
    d = {"z": np.array([0.0, 0.0, -1.0]), "x": np.array([-1.0, 0.0, 0.0])}[direction]
    scene = Scene(
        name=name or f"resonator_{direction}",
        patches=patches, patch_names=names,
        incident=IncidentField(d, 3.0),
        observation_points=np.array([[1.5, 1.5, 1.4], [1.5, 1.5, 1.5],
                                     [1.5, 1.5, 1.6]]),
        design={"mode": "cp", "free": []},
        refinement=refinement)
    mdl = scene.build_model()
    eps = 1e-9
    free = []
    on = lambda v, c: abs(v - c) < eps
    for nu, (x, y, z) in enumerate(mdl.global_cp):
        if not (1 + eps < z < 3 - eps and 1 - eps <= x <= 2 + eps
                and 1 - eps <= y <= 2 + eps):
            continue
        wall_x = on(x, 1) or on(x, 2)
        wall_y = on(y, 1) or on(y, 2)
        if not (wall_x or wall_y):
            continue
        # exclude top rim (z=3) and bottom ring (z=1): already by strict z range
        if wall_x:
            free.append({"cp": nu, "coord": "x", "lower": -0.15, "upper": 0.15})
        if wall_y:
            free.append({"cp": nu, "coord": "y", "lower": -0.15, "upper": 0.15})
    scene.design = {"mode": "cp", "free": free}
    return scene


def duct_scene(wavenumber: float = 3.0, name: str | None = None) -> Scene:
    """3 x 3 x 5 block with a Z-shaped duct; designed duct roof/floor CPs.

    Inlet on the +x face, outlet on x=0; nine observation points sit on the
    plane x=-0.5 in front of the outlet.
    """
    occ = np.ones((3, 3, 5), dtype=bool)
    for cell in [(2, 1, 3), (1, 1, 3), (1, 1, 2), (1, 1, 1), (0, 1, 1)]:
        occ[cell] = False
    solid = VoxelSolid(
        lines=([0.0, 1, 2, 3], [0.0, 1, 2, 3], [0.0, 1, 2, 3, 4, 5]),
        occ=occ,
        counts=([3] * 3, [3] * 3, [3] * 5),
        refined_counts=([5] * 3, [5] * 3, [5] * 5))
    patches, names, refinement = solid.build()
    scene = Scene(
        name=name or f"duct_k{wavenumber:g}",
        patches=patches, patch_names=names,
        incident=IncidentField(np.array([-1.0, 0.0, 0.0]), wavenumber),
        observation_points=np.array([[-0.5, yy, zz]
                                     for yy in (1.25, 1.5, 1.75)
                                     for zz in (1.25, 1.5, 1.75)]),
        design={"mode": "cp", "free": []},
        refinement=refinement)
    mdl = scene.build_model()
    eps = 1e-9
    free = []
    # roof/floor CPs of the two horizontal duct arms, excluding wall edges
    arms = [
        (1.0 + eps, 3.0 - eps, 3.0, 4.0),   # upper arm x-range, z faces 3 and 4
        (0.0 + eps, 1.0 - eps, 1.0, 2.0),   # lower arm
    ]
    for nu, (x, y, z) in enumerate(mdl.global_cp):
        if not (1 + eps < y < 2 - eps):
            continue
        for (x0, x1, zlo, zhi) in arms:
            if x0 < x < x1 and (abs(z - zlo) < eps or abs(z - zhi) < eps):
                free.append({"cp": nu, "coord": "z", "lower": -0.2, "upper": 0.2})
    scene.design = {"mode": "cp", "free": free}
    return scene
