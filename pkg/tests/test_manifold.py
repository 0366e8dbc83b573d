import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypavg.errors import NormalizationError, OutOfCollarError
from hypavg.manifold import (
    SPHERE,
    TORUS,
    PhasePoint,
    SphereCircle,
    TorusLine,
    geodesic_flow,
    geometry_from_descriptor,
    sphere_chart,
    sphere_embed,
)


def unit_torus_point(x1, x2, ang):
    return PhasePoint([x1, x2], [math.cos(ang), math.sin(ang)])


def unit_sphere_point(th, om, ang):
    # covector with |(xi, zeta)|_g = 1: xi = cos(om) cos(ang), zeta = sin(ang)
    return PhasePoint([th, om], [math.cos(om) * math.cos(ang), math.sin(ang)])


class TestGeodesicFlow:
    def test_torus_translation(self):
        p = geodesic_flow(TORUS, PhasePoint([0.3, 0.2], [1.0, 0.0]), 0.25)
        np.testing.assert_allclose(p.x, [0.55, 0.2], atol=1e-15)
        np.testing.assert_allclose(p.xi, [1.0, 0.0])

    @pytest.mark.parametrize("m,p", [
        (TORUS, unit_torus_point(0.1, 0.7, 0.3)),
        (SPHERE, unit_sphere_point(1.0, 0.4, 2.0)),
    ])
    def test_time_zero_identity(self, m, p):
        q = geodesic_flow(m, p, 0.0)
        np.testing.assert_allclose(q.x, p.x, atol=1e-14)
        np.testing.assert_allclose(q.xi, p.xi, atol=1e-14)

    def test_sphere_equator_quarter_turn(self):
        # oracle: explicit rotation by pi/2 in the (e_x, e_y) plane
        q = geodesic_flow(SPHERE, PhasePoint([0.0, 0.0], [1.0, 0.0]), math.pi / 2)
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(sphere_embed(q.x), R @ np.array([1.0, 0.0, 0.0]), atol=1e-15)
        np.testing.assert_allclose(q.x, [math.pi / 2, 0.0], atol=1e-15)
        np.testing.assert_allclose(q.xi, [1.0, 0.0], atol=1e-15)

    def test_rejects_non_unit(self):
        with pytest.raises(NormalizationError):
            geodesic_flow(TORUS, PhasePoint([0, 0], [1.0, 0.1]), 1.0)
        with pytest.raises(NormalizationError):
            geodesic_flow(SPHERE, PhasePoint([0, 0.5], [1.0, 0.0]), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 2 * math.pi), st.floats(-10, 10))
    def test_torus_unit_preserved(self, x1, x2, ang, t):
        q = geodesic_flow(TORUS, unit_torus_point(x1, x2, ang), t)
        assert abs(TORUS.covector_norm(q.x, q.xi) - 1) <= 1e-10

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 2 * math.pi), st.floats(-1.3, 1.3), st.floats(0, 2 * math.pi), st.floats(-10, 10))
    def test_sphere_unit_preserved(self, th, om, ang, t):
        q = geodesic_flow(SPHERE, unit_sphere_point(th, om, ang), t)
        # the chart is singular exactly at the poles
        if abs(abs(q.x[1]) - math.pi / 2) > 1e-4:
            assert abs(SPHERE.covector_norm(q.x, q.xi) - 1) <= 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 2 * math.pi), st.floats(-1.2, 1.2), st.floats(0, 2 * math.pi),
           st.floats(-5, 5), st.floats(-5, 5))
    def test_sphere_group_law(self, th, om, ang, s, t):
        p = unit_sphere_point(th, om, ang)
        a = geodesic_flow(SPHERE, geodesic_flow(SPHERE, p, t), s) if abs(
            abs(geodesic_flow(SPHERE, p, t).x[1]) - math.pi / 2) > 1e-4 else None
        if a is None:
            return
        b = geodesic_flow(SPHERE, p, s + t)
        np.testing.assert_allclose(sphere_embed(a.x), sphere_embed(b.x), atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 2 * math.pi),
           st.floats(-5, 5), st.floats(-5, 5))
    def test_torus_group_law(self, x1, x2, ang, s, t):
        p = unit_torus_point(x1, x2, ang)
        a = geodesic_flow(TORUS, geodesic_flow(TORUS, p, t), s)
        b = geodesic_flow(TORUS, p, s + t)
        d = (a.x - b.x + 0.5) % 1.0 - 0.5
        assert np.max(np.abs(d)) <= 1e-10


class TestFermi:
    def test_flat_circle(self):
        H = TorusLine.circle(2, 0.0)
        xp, xn = H.fermi_coords([0.4, 0.1])
        assert xp == pytest.approx(0.4) and xn == pytest.approx(0.1)

    def test_on_hypersurface(self):
        H = TorusLine.circle(1, 0.3)
        _, xn = H.fermi_coords([0.3, 0.77])
        assert abs(xn) < 1e-15

    def test_sphere_equator(self):
        # oracle: distance along the meridian theta = 1 is the latitude itself
        xp, xn = SphereCircle.equator().fermi_coords([1.0, 0.2])
        assert xp == pytest.approx(1.0, abs=1e-14)
        assert xn == pytest.approx(0.2, abs=1e-14)

    def test_out_of_collar(self):
        with pytest.raises(OutOfCollarError):
            TorusLine.circle(2, 0.0).fermi_coords([0.1, 0.4])
        with pytest.raises(OutOfCollarError):
            SphereCircle.equator().fermi_coords([0.0, 1.0])

    def test_exterior_side_positive(self):
        H = TorusLine.circle(2, 0.5)
        assert H.fermi_coords([0.0, 0.6])[1] > 0
        assert H.fermi_coords([0.0, 0.4])[1] < 0

    @pytest.mark.parametrize("H", [
        TorusLine.circle(2, 0.3),
        TorusLine.circle(1, 0.9),
        TorusLine((1, 2), (0.1, 0.2)),
        TorusLine((3, -1), (0.5, 0.0)),
        SphereCircle.equator(),
        SphereCircle.latitude(0.5),
        SphereCircle.meridian(0.7),
        SphereCircle.great_circle([0.3, -0.4, 0.8]),
    ])
    def test_round_trip(self, H):
        rng = np.random.default_rng(0)
        xp = rng.uniform(0, H.length, 200)
        xn = rng.uniform(-0.99, 0.99, 200) * H.collar
        q = H.fermi_map(xp, xn)
        xp2, xn2 = H.fermi_coords(q)
        dp = (xp2 - xp + 0.5 * H.length) % H.length - 0.5 * H.length
        assert np.max(np.abs(dp)) <= 1e-10
        assert np.max(np.abs(xn2 - xn)) <= 1e-10

    def test_fermi_map_injective_sampled(self):
        H = TorusLine((1, 2), (0.0, 0.0))
        xp, xn = np.meshgrid(np.linspace(0, H.length, 60, endpoint=False),
                             np.linspace(-0.95, 0.95, 15) * H.collar)
        q = H.fermi_map(xp.ravel(), xn.ravel())
        d = np.abs((q[:, None, :] - q[None, :, :] + 0.5) % 1.0 - 0.5).max(-1)
        np.fill_diagonal(d, 1.0)
        assert d.min() > 1e-6


class TestQuadrature:
    def test_torus_weights(self):
        assert TorusLine.circle(2, 0.0).quadrature(16).weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_equator_weights(self):
        assert abs(SphereCircle.equator().quadrature(32).weights.sum() - 2 * math.pi) <= 1e-12

    def test_trig_exact(self):
        q = TorusLine.circle(2, 0.0).quadrature(16)
        assert abs(np.sum(q.weights * np.cos(2 * math.pi * q.params))) <= 1e-14

    def test_minimum_nodes(self):
        with pytest.raises(ValueError):
            TorusLine.circle(2, 0.0).quadrature(4)

    def test_normals_orthogonal(self):
        H = SphereCircle.great_circle([1.0, 1.0, 1.0])
        q = H.quadrature(64)
        tang = np.gradient(q.points, axis=0)
        assert np.max(np.abs(np.sum(tang[1:-1] * q.normals[1:-1], -1))) < 1e-12
        np.testing.assert_allclose(np.linalg.norm(q.normals, axis=-1), 1.0)
        np.testing.assert_allclose(np.sum(q.points * q.normals, -1), 0.0, atol=1e-15)


class TestCotangentSplit:
    def test_tangent(self):
        s = TorusLine.circle(2, 0.0).cotangent_split([0.3, 0.0], [1.0, 0.0])
        assert (s.xi_t, s.xi_n) == (1.0, 0.0)

    def test_conormal(self):
        s = TorusLine.circle(2, 0.0).cotangent_split([0.3, 0.0], [0.0, 1.0])
        assert (s.xi_t, s.xi_n) == (0.0, 1.0)

    def test_sphere_equator(self):
        s = SphereCircle.equator().cotangent_split([0.4, 0.0], [0.6, math.sqrt(1 - 0.36)])
        assert s.xi_t == pytest.approx(0.6, abs=1e-14)
        assert abs(s.xi_n) == pytest.approx(0.8, abs=1e-14)

    @pytest.mark.parametrize("H", [SphereCircle.latitude(0.4), SphereCircle.meridian(1.1),
                                   TorusLine((2, 1), (0.2, 0.1))])
    def test_reconstruction(self, H):
        rng = np.random.default_rng(1)
        xp = rng.uniform(0, H.length, 100)
        xn = rng.uniform(-0.9, 0.9, 100) * H.collar
        x = H.fermi_map(xp, xn)
        ang = rng.uniform(0, 2 * math.pi, 100)
        m = H.host
        if m.is_torus:
            xi = np.stack([np.cos(ang), np.sin(ang)], -1)
        else:
            xi = np.stack([np.cos(x[:, 1]) * np.cos(ang), np.sin(ang)], -1)
        s = H.cotangent_split(x, xi)
        R = H.tangential_form(xp, xn, s.xi_t)
        np.testing.assert_allclose(s.xi_n**2 + R, m.covector_norm(x, xi) ** 2, atol=1e-12)
        # on H itself R reduces to |xi'|^2
        np.testing.assert_allclose(H.tangential_form(xp, 0 * xn, s.xi_t), s.xi_t**2, atol=1e-14)


def test_descriptor_round_trip():
    m, H = geometry_from_descriptor({"manifold": "torus2", "hypersurface": {"kind": "circle", "axis": 2, "level": 0.0}})
    assert m is TORUS and H.descriptor() == {"kind": "circle", "axis": 2, "level": 0.0}
    m, H = geometry_from_descriptor({"manifold": "sphere2", "hypersurface": {"kind": "meridian", "theta": 0.5}})
    assert m is SPHERE and H.descriptor()["kind"] == "meridian"


def test_chart_embed_inverse():
    x = np.array([[0.3, 0.2], [5.0, -1.2]])
    np.testing.assert_allclose(sphere_chart(sphere_embed(x)), x, atol=1e-14)


def test_crossing_times_torus():
    H = TorusLine.circle(1, 0.0)
    tau = H.crossing_times(np.array([0.3, 0.5]), np.array([1.0, 0.0]), -1.0, 1.0)
    got = np.sort(tau[~np.isnan(tau)])
    np.testing.assert_allclose(got, [-0.3, 0.7], atol=1e-15)


def test_crossing_times_sphere():
    H = SphereCircle.equator()
    # meridian covector at latitude 0.3 heading north crosses the equator at tau = -0.3
    tau = H.crossing_times(np.array([0.0, 0.3]), np.array([0.0, 1.0]), -1.0, 1.0)
    got = np.sort(tau[~np.isnan(tau)])
    np.testing.assert_allclose(got, [-0.3], atol=1e-14)
