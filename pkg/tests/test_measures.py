import math

import numpy as np
import pytest

from hypavg.cutoffs import plateau
from hypavg.eigenfamily import (
    SphereGaussianBeam,
    SphereZonal,
    TorusPlaneWave,
    TorusRandomShell,
    TorusSuperposition,
    admissible_h,
)
from hypavg.errors import GlancingError
from hypavg.manifold import SPHERE, TORUS, SphereCircle, TorusLine, covector_to_ambient, sphere_embed
from hypavg.measures import (
    DefectMeasure,
    DirectionDelta,
    FlowBox,
    GeodesicAtom,
    LiouvilleDensity,
    TubeRegion,
    analytic_defect_measure,
    conormal_diagnostic,
    factorization_check,
    fermi_symbol,
    flowed_symbol,
    integrate_symbol,
    liouville_flux,
    tube_measure,
)
from hypavg.quantize import TestOperator, matrix_element, trig_symbol, xi_monomial, XiFactor

V1 = TorusLine.circle(1, 0.0)
H2 = TorusLine.circle(2, 0.0)
EQ = SphereCircle.equator()
PLANE = analytic_defect_measure(TorusPlaneWave())
BEAM = analytic_defect_measure(SphereGaussianBeam())
ZONAL = analytic_defect_measure(SphereZonal())
LIOU_T = DefectMeasure((LiouvilleDensity(TORUS),), TORUS)
LIOU_S = DefectMeasure((LiouvilleDensity(SPHERE),), SPHERE)
TWO = analytic_defect_measure(TorusSuperposition([(3, 4), (-3, -4)], [1, 1]))


class TestAnalyticMeasures:
    def test_plane_wave(self):
        (c,) = PLANE.components
        assert isinstance(c, DirectionDelta) and c.xi0 == (1.0, 0.0) and c.mass == 1

    def test_beam(self):
        (c,) = BEAM.components
        assert isinstance(c, GeodesicAtom) and c.mass == 1
        # uniform density 1/(2 pi) along the equator, covector xi = -1
        P, V = c.orbit(np.array([0.3]))
        th = math.atan2(P[0, 1], P[0, 0])
        assert abs(P[0, 2]) < 1e-15 and V[0] @ np.array([-math.sin(th), math.cos(th), 0]) == pytest.approx(-1)

    def test_two_mode(self):
        assert sorted(c.mass for c in TWO.components) == pytest.approx([0.5, 0.5])
        assert TWO.total_mass == pytest.approx(1, abs=1e-10)

    def test_shift_density_invariant(self):
        mu = analytic_defect_measure(TorusSuperposition([(0, 1), (0, -1)], [1, 0.5j], "shift", (1, 0)))
        (c,) = mu.components
        assert c.mass == pytest.approx(1, abs=1e-12)
        x2 = np.linspace(0, 1, 7)
        rho = c.rho(np.stack([0 * x2, x2], -1))
        a = np.array([1, 0.5j]) / np.linalg.norm([1, 0.5j])
        np.testing.assert_allclose(rho, np.abs(a[0] * np.exp(2j * np.pi * x2) + a[1] * np.exp(-2j * np.pi * x2)) ** 2)

    def test_random_shell_needs_level(self):
        fam = TorusRandomShell(3, 25)
        with pytest.raises(ValueError):
            analytic_defect_measure(fam)
        mu = analytic_defect_measure(fam, admissible_h(fam, 1)[0])
        assert mu.total_mass == pytest.approx(1, abs=1e-12)

    def test_non_invariant_density_rejected(self):
        with pytest.raises(ValueError):
            DirectionDelta((1.0, 0.0), (((0, 0), 1.0), ((1, 0), 0.2)))


class TestIntegrateSymbol:
    @pytest.mark.parametrize("mu", [PLANE, TWO, BEAM, ZONAL, LIOU_T, LIOU_S])
    def test_total_mass(self, mu):
        one = lambda x, xi: np.ones(np.shape(x)[:-1])
        assert integrate_symbol(mu, one).real == pytest.approx(1, abs=1e-12)

    def test_plane_wave_xi_only(self):
        psi = XiFactor(lambda xi: np.cos(xi[..., 0]) + xi[..., 1] ** 2)
        sym = trig_symbol({(0, 0): 1.0}, psi)
        assert integrate_symbol(PLANE, sym) == pytest.approx(math.cos(1))
        assert integrate_symbol(PLANE, lambda x, xi: np.cos(xi[..., 0])) == pytest.approx(math.cos(1), abs=1e-14)

    def test_beam_conormal_symbol_vanishes(self):
        a = fermi_symbol(EQ, lambda xp, xn, xt, xnn: plateau(np.abs(xt), 0.3) ** 2 * xnn**2)
        assert integrate_symbol(BEAM, a) == 0

    def test_second_moments(self):
        xi2 = lambda x, xi: xi[..., 1] ** 2
        xith = lambda x, xi: xi[..., 0] ** 2 / np.cos(x[..., 1]) ** 2
        assert integrate_symbol(ZONAL, xi2).real == pytest.approx(1, abs=1e-12)
        assert integrate_symbol(ZONAL, xith).real == pytest.approx(0, abs=1e-12)
        assert integrate_symbol(BEAM, xith).real == pytest.approx(1, abs=1e-12)
        assert integrate_symbol(LIOU_S, xi2).real == pytest.approx(0.5, abs=1e-10)
        assert integrate_symbol(LIOU_T, lambda x, xi: xi[..., 0] ** 2).real == pytest.approx(0.5, abs=1e-12)

    def test_structured_matches_grid(self):
        mu = analytic_defect_measure(TorusSuperposition([(0, 1), (0, -1)], [1, 0.5j], "shift", (1, 0)))
        sym = trig_symbol({(0, 2): 0.3, (0, 0): 1.0, (0, -2): 0.3, (1, 1): 0.2}, xi_monomial(2, 0))
        assert integrate_symbol(mu, sym) == pytest.approx(integrate_symbol(mu, lambda x, xi: sym(x, xi)), abs=1e-13)

    @pytest.mark.parametrize("mu", [PLANE, TWO, BEAM, ZONAL])
    def test_flow_invariance(self, mu):
        if mu.manifold.is_torus:
            a = lambda x, xi: np.exp(np.sin(2 * np.pi * x[..., 0]) + np.cos(2 * np.pi * x[..., 1])) * (1 + xi[..., 0])
        else:
            # smooth on the ambient sphere; chart components jump at the poles
            def a(x, xi):
                P, V = sphere_embed(x), covector_to_ambient(x, xi)
                return np.exp(P[..., 2] + P[..., 0]) * (1 + V[..., 2] + V[..., 1] * P[..., 0])
        base = integrate_symbol(mu, a)
        for t in (-1.0, 0.37, 1.0):
            assert abs(integrate_symbol(mu, flowed_symbol(a, mu.manifold, t)) - base) <= 1e-8

    def test_matrix_elements_converge(self):
        fam = TorusSuperposition([(0, 1), (0, -1)], [1, 0.5j], "shift", (1, 0))
        mu = analytic_defect_measure(fam)
        sym = trig_symbol({(0, 2): 0.3, (0, 0): 1.0, (0, -2): 0.3}, XiFactor(lambda xi: np.exp(-xi[..., 1] ** 2)))
        target = integrate_symbol(mu, sym)
        hs = admissible_h(fam, 30)
        err = [abs(matrix_element(TestOperator(sym, h), fam) - target) for h in hs]
        slope = np.polyfit(np.log(hs[10:]), np.log(err[10:]), 1)[0]
        assert slope >= 0.95


class TestTubeMeasure:
    def test_plane_wave_conormal(self):
        for t0 in (0.01, 0.1, 0.3):
            assert tube_measure(PLANE, TubeRegion(V1, t0, delta=0.1)).value == pytest.approx(1, abs=1e-14)

    def test_plane_wave_tangent(self):
        assert tube_measure(PLANE, TubeRegion(H2, 0.1, delta=0.5)).value == 0
        assert tube_measure(PLANE, TubeRegion(H2, 0.1, band=(0.0, 1.0))).value == 0

    def test_beam(self):
        assert tube_measure(BEAM, TubeRegion(EQ, 0.05, delta=0.3)).value == 0
        for th in (0.0, 1.3):
            r = tube_measure(BEAM, TubeRegion(SphereCircle.meridian(th), 0.05, delta=0.1))
            assert r.value == pytest.approx(1 / math.pi, abs=1e-14)

    def test_zonal_equator(self):
        assert tube_measure(ZONAL, TubeRegion(EQ, 0.05, delta=0.05)).value == pytest.approx(1 / math.pi, abs=1e-12)

    def test_direction_with_tilt(self):
        # (3/5, 4/5) crosses {x2 = 0} with xi' = 3/5 and |xi_n| = 4/5
        r = tube_measure(TWO, TubeRegion(H2, 0.1, band=(0.5, 0.7)))
        assert r.value == pytest.approx(0.8, abs=1e-14)
        half = tube_measure(TWO, TubeRegion(H2, 0.1, band=(0.5, 0.7), arcs=((0.0, 0.25), (0.5, 0.75))))
        assert half.value == pytest.approx(0.4, abs=1e-14)

    def test_overlapping_thickening_grid(self):
        # 2 t0 |xi_n| exceeds the line spacing: union saturates to mass / (2 t0)
        r = tube_measure(PLANE, TubeRegion(V1, 0.8, delta=0.1))
        assert r.value == pytest.approx(1 / 1.6, rel=1e-3)

    def test_liouville_against_closed_form(self):
        r = tube_measure(LIOU_T, TubeRegion(H2, 0.05, delta=0.2))
        assert abs(r.value - liouville_flux(TORUS, 1.0, 0.0, 0.2)) <= 4 * r.stderr
        assert r.stderr > 0

    def test_liouville_sphere_band(self):
        r = tube_measure(LIOU_S, TubeRegion(SphereCircle.latitude(0.4), 0.05, band=(0.2, 0.6)), n_samples=400_000)
        expect = liouville_flux(SPHERE, SphereCircle.latitude(0.4).length, 0.2, 0.6)
        assert abs(r.value - expect) <= 4 * r.stderr

    def test_t0_stability_off_glancing(self):
        H = SphereCircle.great_circle([1.0, 2.0, 2.0])
        a = tube_measure(ZONAL, TubeRegion(H, 0.04, band=(0.2, 0.8))).value
        b = tube_measure(ZONAL, TubeRegion(H, 0.02, band=(0.2, 0.8))).value
        assert a > 0 and abs(a / b - 1) < 0.01

    def test_monotone(self):
        H = SphereCircle.great_circle([1.0, 2.0, 2.0])
        vals = [tube_measure(ZONAL, TubeRegion(H, 0.05, delta=d)).value for d in (0.8, 0.4, 0.2, 0.1)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
        masses = [2 * t * tube_measure(ZONAL, TubeRegion(H, t, delta=0.5)).value for t in (0.01, 0.05, 0.2)]
        assert masses[0] <= masses[1] <= masses[2]


class TestDiagnostic:
    def test_plane_wave(self):
        assert conormal_diagnostic(PLANE, V1).verdict == "concentrated"
        rep = conormal_diagnostic(PLANE, H2)
        assert rep.verdict == "diffuse" and rep.estimate == 0

    def test_sphere(self):
        assert conormal_diagnostic(ZONAL, EQ).verdict == "concentrated"
        assert conormal_diagnostic(BEAM, EQ).verdict == "diffuse"
        assert conormal_diagnostic(BEAM, SphereCircle.meridian(0.0)).verdict == "concentrated"

    def test_liouville_diffuse(self):
        rep = conormal_diagnostic(LIOU_T, H2, n_samples=400_000)
        assert rep.verdict == "diffuse" and rep.monotone
        assert len(rep.csv_rows()) == 4 and set(rep.csv_rows()[0]) == {"delta", "t0", "quotient", "stderr"}

    def test_glancing_delta_rejected(self):
        with pytest.raises(GlancingError):
            conormal_diagnostic(PLANE, H2, deltas=(1.0,))


class TestFactorization:
    B = FlowBox((0.1, 0.6), (0.5, 0.7), 1)

    def test_two_mode_direction(self):
        r = factorization_check(TWO, H2, (0.0, 0.2), self.B, 0.5)
        assert r.flow_out == pytest.approx(0.5 * 0.8 * 0.5 * 0.2)
        assert r.residual <= 1e-10

    def test_nonuniform_density(self):
        mu = analytic_defect_measure(TorusSuperposition([(0, 1), (0, -1)], [1, 0.5j], "shift", (1, 0)))
        H = TorusLine.circle(1, 0.2)  # crossed transversally by xi0 = (1, 0)
        B = FlowBox((0.1, 0.4), (-0.2, 0.2), 1)
        r = factorization_check(mu, H, (-0.1, 0.15), B, 0.5)
        assert r.residual <= 1e-10 and r.flow_out > 0

    def test_empty_interval(self):
        assert factorization_check(TWO, H2, (0.1, 0.1), self.B, 0.5).residual == 0

    def test_glancing_rejected(self):
        with pytest.raises(GlancingError):
            factorization_check(TWO, H2, (0.0, 0.1), FlowBox((0, 1), (0.5, 0.95), 1), 0.5)

    def test_liouville(self):
        r = factorization_check(LIOU_T, H2, (0.0, 0.2), self.B, 0.5)
        assert r.samples >= 1_000_000
        assert r.residual <= 3 * r.stderr
        assert abs(r.liouville_constant - 1 / (2 * np.pi)) <= 4 * r.stderr / (0.2 * self.B.volume)
        assert r.marginal_max_z < 5
