import numpy as np
import pytest

from igbemopt import nurbs


def bernstein_quad_kv():
    return nurbs.KnotVector(2, np.array([0, 0, 0, 1, 1, 1.0]))


def cox_de_boor(knots, degree, k, u):
    """Independent brute-force Cox-de Boor recursion."""
    if degree == 0:
        last = knots[k + 1] == knots[-1]
        if knots[k] <= u < knots[k + 1] or (last and u == knots[k + 1]):
            return 1.0
        return 0.0
    left = 0.0
    if knots[k + degree] > knots[k]:
        left = (u - knots[k]) / (knots[k + degree] - knots[k]) \
            * cox_de_boor(knots, degree - 1, k, u)
    right = 0.0
    if knots[k + degree + 1] > knots[k + 1]:
        right = (knots[k + degree + 1] - u) \
            / (knots[k + degree + 1] - knots[k + 1]) \
            * cox_de_boor(knots, degree - 1, k + 1, u)
    return left + right


class TestBasis:
    def test_bernstein_midpoint(self):
        kv = bernstein_quad_kv()
        vals = [nurbs.bspline_basis(kv, k, 0.5)[0] for k in range(3)]
        assert vals == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(3)
        for kv in (bernstein_quad_kv(), nurbs.clamped_uniform_knots(2, 4),
                   nurbs.clamped_uniform_knots(4, 9)):
            u = rng.random(1000)
            _, ders = nurbs.basis_and_derivs(kv, u, nders=0)
            assert np.max(np.abs(ders[:, 0, :].sum(axis=1) - 1)) < 1e-12

    def test_matches_recursive_oracle(self):
        kv = nurbs.KnotVector(2, np.array([0, 0, 0, 0.5, 1, 1, 1.0]))
        for u in (0.25, 0.1, 0.7, 0.9):
            got = [nurbs.bspline_basis(kv, k, u)[0] for k in range(kv.n)]
            want = [cox_de_boor(kv.knots, 2, k, u) for k in range(kv.n)]
            assert got == pytest.approx(want, abs=1e-14)

    def test_derivative_vs_finite_difference(self):
        kv = nurbs.clamped_uniform_knots(3, 7)
        u = np.array([0.17, 0.43, 0.88])
        h = 1e-6
        _, d = nurbs.basis_and_derivs(kv, u, nders=1)
        _, dp = nurbs.basis_and_derivs(kv, u + h, nders=0)
        _, dm = nurbs.basis_and_derivs(kv, u - h, nders=0)
        fd = (dp[:, 0, :] - dm[:, 0, :]) / (2 * h)
        assert np.max(np.abs(fd - d[:, 1, :])) < 1e-5

    def test_out_of_range_index(self):
        kv = bernstein_quad_kv()
        with pytest.raises(ValueError):
            nurbs.bspline_basis(kv, 5, 0.5)


class TestGreville:
    def test_bernstein(self):
        kv = bernstein_quad_kv()
        assert nurbs.greville_abscissae(kv) == pytest.approx([0, 0.5, 1])

    def test_one_interior_knot(self):
        kv = nurbs.KnotVector(2, np.array([0, 0, 0, 0.5, 1, 1, 1.0]))
        assert nurbs.greville_abscissae(kv) == pytest.approx(
            [0, 0.25, 0.75, 1])

    def test_matches_averaging_formula(self):
        kv = nurbs.clamped_uniform_knots(4, 9)
        got = nurbs.greville_abscissae(kv)
        want = [kv.knots[k + 1:k + 5].mean() for k in range(kv.n)]
        assert got == pytest.approx(want, abs=1e-15)
        assert got[0] == 0.0 and got[-1] == 1.0

    def test_degree_zero_rejected(self):
        kv = nurbs.KnotVector(0, np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            nurbs.greville_abscissae(kv)


def flat_patch():
    kv = nurbs.KnotVector(1, np.array([0, 0, 1, 1.0]))
    cp = np.array([[[0, 0, 0], [0, 1, 0]],
                   [[1, 0, 0], [1, 1, 0.0]]])
    return nurbs.NurbsPatch(kv, kv, cp, np.ones((2, 2)))


class TestEvalSurface:
    def test_flat_bilinear(self):
        fr = nurbs.eval_surface(flat_patch(), 0.3, 0.7)
        assert fr.point == pytest.approx([0.3, 0.7, 0])
        assert fr.normal == pytest.approx([0, 0, 1])
        assert fr.jacobian == pytest.approx(1.0)

    def test_equal_weights_cancel(self):
        p = flat_patch()
        p2 = nurbs.NurbsPatch(p.knots_s, p.knots_t, p.control_points,
                              3.7 * np.ones((2, 2)))
        for s, t in [(0.2, 0.9), (0.5, 0.5)]:
            a = nurbs.eval_surface(p, s, t)
            b = nurbs.eval_surface(p2, s, t)
            assert a.point == pytest.approx(b.point, abs=1e-14)

    def test_quarter_circle_on_circle(self):
        p = nurbs.quarter_circle_patch()
        rng = np.random.default_rng(0)
        s, t = rng.random(100), rng.random(100)
        y = nurbs.eval_surface_many(p, s, t, nders=0)["y"]
        r = np.hypot(y[:, 0], y[:, 1])
        assert np.max(np.abs(r - 1.0)) < 1e-12

    def test_tangents_vs_finite_difference(self):
        p = nurbs.quarter_circle_patch()
        h = 1e-6
        for s, t in [(0.3, 0.6), (0.71, 0.12)]:
            d = nurbs.eval_surface_many(p, [s], [t], nders=1)
            fd_s = (nurbs.eval_surface_many(p, [s + h], [t], nders=0)["y"]
                    - nurbs.eval_surface_many(p, [s - h], [t], nders=0)["y"]
                    ) / (2 * h)
            fd_t = (nurbs.eval_surface_many(p, [s], [t + h], nders=0)["y"]
                    - nurbs.eval_surface_many(p, [s], [t - h], nders=0)["y"]
                    ) / (2 * h)
            assert np.allclose(d["ys"], fd_s, rtol=1e-5, atol=1e-8)
            assert np.allclose(d["yt"], fd_t, rtol=1e-5, atol=1e-8)


class TestInsertKnot:
    def test_bernstein_subdivision(self):
        kv = bernstein_quad_kv()
        cp = np.zeros((3, 3, 3))
        cp[..., 0] = np.linspace(0, 1, 3)[:, None]
        cp[..., 1] = np.linspace(0, 1, 3)[None, :]
        cp[..., 2] = cp[..., 0] ** 2
        p = nurbs.NurbsPatch(kv, kv, cp, np.ones((3, 3)))
        p2 = nurbs.insert_knot(p, "s", 0.5)
        assert p2.knots_s.n == 4
        rng = np.random.default_rng(1)
        s, t = rng.random(50), rng.random(50)
        a = nurbs.eval_surface_many(p, s, t, nders=0)["y"]
        b = nurbs.eval_surface_many(p2, s, t, nders=0)["y"]
        assert np.max(np.abs(a - b)) < 1e-13

    def test_geometry_preserved_at_knot(self):
        p = nurbs.quarter_circle_patch()
        p2 = nurbs.insert_knot(p, "t", 0.37)
        a = nurbs.eval_surface(p, 0.5, 0.37).point
        b = nurbs.eval_surface(p2, 0.5, 0.37).point
        assert a == pytest.approx(b, abs=1e-13)

    def test_random_insertions_invariant(self):
        p = nurbs.quarter_circle_patch()
        rng = np.random.default_rng(7)
        q = p
        for u in rng.random(4):
            q = nurbs.insert_knot(q, "s", float(u))
            q = nurbs.insert_knot(q, "t", float(u))
        s, t = rng.random(200), rng.random(200)
        a = nurbs.eval_surface_many(p, s, t, nders=0)["y"]
        b = nurbs.eval_surface_many(q, s, t, nders=0)["y"]
        assert np.max(np.abs(a - b)) < 1e-10

    def test_multiplicity_limit(self):
        p = nurbs.quarter_circle_patch()
        q = nurbs.insert_knot(p, "s", 0.5)
        q = nurbs.insert_knot(q, "s", 0.5)
        with pytest.raises(ValueError):
            nurbs.insert_knot(q, "s", 0.5)
