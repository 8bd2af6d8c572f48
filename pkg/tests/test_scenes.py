import numpy as np
import pytest

from igbemopt import model, nurbs, scenes


class TestSpherePatches:
    def test_unifies_to_98(self):
        patches, names = scenes.sphere_patches(1.0)
        m = model.unify_control_points(patches, names=names)
        assert m.N == 98

    def test_radial_deviation(self):
        patches, _ = scenes.sphere_patches(2.5)
        rng = np.random.default_rng(6)
        s, t = rng.random(400), rng.random(400)
        for p in patches:
            y = nurbs.eval_surface_many(p, s, t, nders=0)["y"]
            r = np.linalg.norm(y, axis=1)
            assert np.max(np.abs(r - 2.5) / 2.5) < 2e-4

    def test_outward_normals(self):
        patches, _ = scenes.sphere_patches(1.0)
        for p in patches:
            fr = nurbs.eval_surface(p, 0.37, 0.61)
            assert np.dot(fr.normal, fr.point) > 0.9


class TestSceneRoundtrip:
    @pytest.mark.parametrize("maker", [
        scenes.sphere_scene, scenes.cube_scene, scenes.reflector_scene,
        lambda: scenes.resonator_scene("z"), scenes.duct_scene])
    def test_json_roundtrip(self, tmp_path, maker):
        sc = maker()
        path = tmp_path / "scene.json"
        scenes.save_scene(sc, path)
        sc2 = scenes.load_scene(path)
        assert sc2.name == sc.name
        assert sc2.design == sc.design
        m1, m2 = sc.build_model(), sc2.build_model()
        assert m1.N == m2.N
        assert np.allclose(m1.global_cp, m2.global_cp, atol=1e-15)
        assert np.allclose(sc2.observation_points, sc.observation_points)

    def test_shipped_scene_files(self):
        import glob
        import os
        root = os.path.join(os.path.dirname(__file__), "..", "scenes")
        files = sorted(glob.glob(os.path.join(root, "*.json")))
        assert len(files) >= 5
        for f in files:
            sc = scenes.load_scene(f)
            assert sc.build_model().N > 0


class TestSceneShapes:
    def test_reflector_design_space(self):
        sc = scenes.reflector_scene()
        m = sc.build_model()
        ds = sc.design_space(m)
        assert m.N == 92
        assert ds.n_free == 16
        # designed coordinates are z components bounded by +-0.3
        for i in np.flatnonzero(ds.free_mask):
            assert i % 3 == 2
            assert ds.upper[i] - ds.initial[i] == pytest.approx(0.3)
            assert ds.initial[i] - ds.lower[i] == pytest.approx(0.3)

    def test_resonator_design_space(self):
        sc = scenes.resonator_scene("z")
        m = sc.build_model()
        ds = sc.design_space(m)
        assert m.N == 282
        assert ds.n_free == 48

    def test_resonator_directions(self):
        z = scenes.resonator_scene("z")
        x = scenes.resonator_scene("x")
        assert np.allclose(z.incident.direction, [0, 0, -1])
        assert not np.allclose(x.incident.direction, [0, 0, -1])

    def test_duct_scene_builds(self):
        sc = scenes.duct_scene()
        m = sc.build_model()
        assert m.N == 384
        assert sc.design_space(m).n_free > 0
