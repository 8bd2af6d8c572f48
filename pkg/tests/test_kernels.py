import numpy as np
import pytest

from igbemopt import kernels
from igbemopt.quadrature import SubdivisionPolicy, gauss_rule, rule_on_rect


class TestHelmholtzG:
    def test_laplace_limit(self):
        g = kernels.helmholtz_G(np.array([1.0, 0, 0]), 1e-12)
        assert g == pytest.approx(1 / (4 * np.pi), rel=1e-9)

    def test_unit_distance_k1(self):
        g = kernels.helmholtz_G(np.array([0, 1.0, 0]), 1.0)
        want = (np.cos(1) +1j * np.sin(1)) / (4 * np.pi)
        assert g == pytest.approx(want, abs=1e-15)
        assert g.real == pytest.approx(0.042998, abs=1e-5)
        assert g.imag == pytest.approx(0.066961, abs=1e-5)

    def test_full_period_phase(self):
        g = kernels.helmholtz_G(np.array([0, 0, 2.0]), np.pi)
        assert g == pytest.approx(1 / (8 * np.pi), abs=1e-15)

    def test_zero_separation_raises(self):
        with pytest.raises(kernels.SingularEvaluationError):
            kernels.helmholtz_G(np.zeros(3), 1.0)

    def test_outgoing_far_behavior(self):
        k = 2.0
        for R in (50.0, 100.0, 200.0):
            g = kernels.helmholtz_G(np.array([R, 0, 0]), k)
            assert abs(g) * R == pytest.approx(1 / (4 * np.pi), rel=1e-12)
            assert np.angle(g * np.exp(-1j * k * R)) == pytest.approx(
                0.0, abs=1e-9)


class TestNormalDerivatives:
    def test_perpendicular_normal(self):
        r = np.array([1.0, 0, 0])
        n = np.array([0, 1.0, 0])
        assert kernels.helmholtz_dGdn(r, n, 2.0) == 0
        assert kernels.laplace_dGamma_dn(r, n) == 0

    def test_laplace_limit(self):
        r = np.array([0.3, -0.2, 0.9])
        n = np.array([0, 0, 1.0])
        a = kernels.helmholtz_dGdn(r, n, 1e-10)
        b = kernels.laplace_dGamma_dn(r, n)
        assert a == pytest.approx(b, rel=1e-8)

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            r = rng.normal(size=3)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            k = rng.uniform(0.5, 4.0)
            h = 1e-6
            # same directional-derivative convention the axial Laplace
            # example pins: d/dh G(r + h n)
            fd = (kernels.helmholtz_G(r + h * n, k)
                  - kernels.helmholtz_G(r - h * n, k)) / (2 * h)
            got = kernels.helmholtz_dGdn(r, n, k)
            assert got == pytest.approx(fd, rel=1e-6)

    def test_laplace_axial_sign(self):
        h = 0.37
        got = kernels.laplace_dGamma_dn(np.array([0, 0, h]),
                                        np.array([0, 0, 1.0]))
        assert got == pytest.approx(-1 / (4 * np.pi * h ** 2), rel=1e-13)

    def test_gauss_solid_angle(self):
        # full sphere around the origin: integral of dGamma/dn over the
        # enclosing surface with outward normal is -1
        rule = gauss_rule(20)
        s, t, w = rule_on_rect(rule, (0.0, 1.0, 0.0, 1.0))
        theta = np.pi * s
        phi = 2 * np.pi * t
        n = np.column_stack([np.sin(theta) * np.cos(phi),
                             np.sin(theta) * np.sin(phi), np.cos(theta)])
        R = 1.7
        jac = R ** 2 * np.sin(theta) * np.pi * 2 * np.pi
        vals = np.array([kernels.laplace_dGamma_dn(-R * ni, ni) for ni in n])
        assert np.sum(vals * jac * w) == pytest.approx(1.0, abs=1e-10)


class TestIncident:
    def field(self, k=1.0):
        return kernels.IncidentField(np.array([0, 0, -1.0]), k)

    def test_observation_point_value(self):
        v = kernels.incident_eval(self.field(), np.array([0, 0, 8.5]))
        assert v == pytest.approx(np.exp(-8.5j), abs=1e-15)

    def test_origin(self):
        assert kernels.incident_eval(self.field(), np.zeros(3)) == 1.0

    def test_unit_amplitude(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(20, 3)) * 5
        v = kernels.incident_eval(self.field(2.3), x)
        assert np.allclose(np.abs(v), 1.0, atol=1e-14)

    def test_gradient(self):
        f = self.field(1.7)
        x = np.array([0.3, -1.2, 2.0])
        h = 1e-6
        g = kernels.incident_gradient(f, x)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (kernels.incident_eval(f, x + e)
                  - kernels.incident_eval(f, x - e)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-8)

    def test_non_unit_direction_rejected(self):
        with pytest.raises(ValueError):
            kernels.IncidentField(np.array([0, 0, -2.0]), 1.0)
