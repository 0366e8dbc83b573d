import math

import numpy as np
import pytest
from scipy.special import eval_legendre

from hypavg.eigenfamily import (
    SphereGaussianBeam,
    SphereZonal,
    TorusPlaneWave,
    TorusRandomShell,
    TorusSuperposition,
    admissible_h,
    beam_log_constant,
    evaluate,
    evaluate_gradient,
    family_from_descriptor,
    l2_norm,
    lattice_shell,
    legendre_normalized,
    sample,
)
from hypavg.errors import InadmissibleError


def brute_sums_of_two_squares(limit):
    return sorted({a * a + b * b for a in range(0, 60) for b in range(0, 60)} - {0})[:limit]


class TestAdmissible:
    def test_plane_wave(self):
        hs = admissible_h(TorusPlaneWave((1, 0)), 5)
        np.testing.assert_allclose(hs, [1 / (2 * math.pi * m) for m in range(1, 6)], rtol=1e-15)

    def test_zonal(self):
        hs = admissible_h(SphereZonal(), 4)
        np.testing.assert_allclose(hs, [1 / math.sqrt(l * (l + 1)) for l in range(1, 5)], rtol=1e-15)

    def test_random_shell_ladder(self):
        fam = TorusRandomShell(seed=3)
        expected = brute_sums_of_two_squares(30)
        np.testing.assert_allclose(admissible_h(fam, 30),
                                   [1 / (2 * math.pi * math.sqrt(n)) for n in expected], rtol=1e-15)

    @pytest.mark.parametrize("fam", [TorusPlaneWave((3, 4)), SphereGaussianBeam(l_min=10, l_step=5),
                                     TorusSuperposition([(0, 1), (0, -1)], [1, 1], "shift", (1, 0)),
                                     TorusRandomShell(1, 50)])
    def test_strictly_decreasing(self, fam):
        hs = admissible_h(fam, 12)
        assert all(a > b for a, b in zip(hs, hs[1:]))
        for h in hs:
            fam.level_of(h)

    def test_inadmissible(self):
        with pytest.raises(InadmissibleError):
            evaluate(TorusPlaneWave(), 0.1, [0.0, 0.0])
        with pytest.raises(InadmissibleError):
            evaluate(SphereZonal(l_min=2, l_step=2), 1 / math.sqrt(12), [0.0, 0.0])
        with pytest.raises(InadmissibleError):
            TorusRandomShell(0).level_of(1 / (2 * math.pi * math.sqrt(3)))


class TestEvaluate:
    def test_plane_wave_origin_line(self):
        h = admissible_h(TorusPlaneWave(), 7)[-1]
        assert evaluate(TorusPlaneWave(), h, [0.0, 0.7]) == pytest.approx(1.0)

    def test_zonal_l2_equator(self):
        h = 1 / math.sqrt(6)
        assert evaluate(SphereZonal(), h, [0.3, 0.0]).real == pytest.approx(-0.5 * math.sqrt(5 / (4 * math.pi)))

    @pytest.mark.parametrize("l", [1, 2, 7, 40, 333, 1000])
    def test_legendre_against_scipy(self, l):
        z = np.linspace(-1, 1, 101)
        p, pm = legendre_normalized(l, z)
        np.testing.assert_allclose(p, math.sqrt((2 * l + 1) / (4 * math.pi)) * eval_legendre(l, z), atol=1e-12)
        np.testing.assert_allclose(pm, math.sqrt((2 * l - 1) / (4 * math.pi)) * eval_legendre(l - 1, z), atol=1e-12)

    def test_beam_pole(self):
        h = 1 / math.sqrt(12 * 13)
        assert abs(evaluate(SphereGaussianBeam(), h, [0.4, math.pi / 2])) < 1e-150

    def test_beam_constant_small_l(self):
        # Y_1^1 normalizer sqrt(3/(8 pi))
        assert math.exp(beam_log_constant(1)) == pytest.approx(math.sqrt(3 / (8 * math.pi)))

    def test_beam_matches_chart_formula(self):
        l = 9
        h = 1 / math.sqrt(l * (l + 1))
        x = np.array([[0.7, 0.3], [2.5, -0.9]])
        c = math.exp(beam_log_constant(l))
        ref = c * np.exp(-1j * l * x[:, 0]) * np.cos(x[:, 1]) ** l
        np.testing.assert_allclose(evaluate(SphereGaussianBeam(), h, x), ref, rtol=1e-12)

    def test_large_l_finite(self):
        h = 1 / math.sqrt(10000 * 10001)
        v = evaluate(SphereGaussianBeam(), h, [0.0, 0.0])
        assert np.isfinite(v) and abs(v) > 1


class TestGradient:
    def test_plane_wave(self):
        fam = TorusPlaneWave((1, 2))
        h = admissible_h(fam, 3)[-1]
        x = np.array([0.21, 0.64])
        k = 3 * np.array([1, 2])
        np.testing.assert_allclose(evaluate_gradient(fam, h, x), 2j * np.pi * k * evaluate(fam, h, x))

    def test_zonal_pole(self):
        g = evaluate_gradient(SphereZonal(), 1 / math.sqrt(20), [0.0, math.pi / 2])
        assert np.max(np.abs(g)) < 1e-12

    def test_beam_even_in_omega(self):
        h = 1 / math.sqrt(30)
        g = evaluate_gradient(SphereGaussianBeam(), h, [1.1, 0.0])
        assert abs(g[1]) < 1e-14

    @pytest.mark.parametrize("fam,h", [
        (SphereZonal(), 1 / math.sqrt(7 * 8)),
        (SphereGaussianBeam(), 1 / math.sqrt(6 * 7)),
        (SphereGaussianBeam(surrogate=True), 1 / math.sqrt(6 * 7)),
    ])
    def test_sphere_against_finite_differences(self, fam, h):
        x = np.array([0.8, 0.35])
        g = evaluate_gradient(fam, h, x)
        eps = 1e-6
        for i in range(2):
            dx = np.zeros(2)
            dx[i] = eps
            fd = (evaluate(fam, h, x + dx) - evaluate(fam, h, x - dx)) / (2 * eps)
            assert abs(fd - g[i]) < 1e-6 * max(1, abs(g[i]))

    def test_semiclassical_size(self):
        fam = TorusRandomShell(5)
        for h in admissible_h(fam, 40)[-5:]:
            g = evaluate_gradient(fam, h, np.random.default_rng(0).uniform(size=(50, 2)))
            assert np.max(np.abs(h * g)) < 10


class TestNorms:
    def test_plane_wave(self):
        h = admissible_h(TorusPlaneWave((2, 1)), 4)[-1]
        assert abs(l2_norm(TorusPlaneWave((2, 1)), h) - 1) <= 1e-12

    def test_superposition(self):
        fam = TorusSuperposition([(3, 4), (-3, -4), (5, 0)], [1, 1j, 0.5])
        assert abs(l2_norm(fam, admissible_h(fam, 3)[-1]) - 1) <= 1e-12

    @pytest.mark.parametrize("l", [5, 50, 500])
    def test_exact_beam(self, l):
        assert abs(l2_norm(SphereGaussianBeam(), 1 / math.sqrt(l * (l + 1))) - 1) <= 1e-10

    @pytest.mark.parametrize("l", [4, 31])
    def test_zonal(self, l):
        assert abs(l2_norm(SphereZonal(), 1 / math.sqrt(l * (l + 1))) - 1) <= 1e-10

    def test_beam_surrogate_l400(self):
        l = 400
        h = 1 / math.sqrt(l * (l + 1))
        got = l2_norm(SphereGaussianBeam(surrogate=True), h)
        # Laplace-method oracle: int_R exp(-l w^2) cos w dw = sqrt(pi/l) exp(-1/(4l))
        oracle = math.sqrt(2 * math.pi * math.exp(2 * beam_log_constant(l))
                           * math.sqrt(math.pi / l) * math.exp(-1 / (4 * l)))
        assert got == pytest.approx(oracle, rel=1e-10)
        assert abs(got - 1) <= 0.01

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            l2_norm(TorusPlaneWave(), 1 / (2 * math.pi), resolution=16)

    def test_phase_invariance(self):
        a = TorusSuperposition([(1, 0), (0, 1)], [1, 2])
        b = TorusSuperposition([(1, 0), (0, 1)], [1j, 2j])
        h = admissible_h(a, 3)[-1]
        assert l2_norm(a, h) == pytest.approx(l2_norm(b, h), abs=1e-15)


class TestEigenRelation:
    def test_torus_spectral(self):
        fam = TorusRandomShell(11, 60)
        for h in admissible_h(fam, 5):
            sf = sample(fam, h, 64)
            k = np.fft.fftfreq(64, 1 / 64)
            K1, K2 = np.meshgrid(k, k, indexing="ij")
            lap = np.fft.ifft2(-(2 * np.pi) ** 2 * (K1**2 + K2**2) * np.fft.fft2(sf.values))
            r = np.linalg.norm(-h**2 * lap - sf.values) / np.linalg.norm(sf.values)
            assert r <= 1e-8

    @pytest.mark.parametrize("l", [10, 40])
    def test_zonal_legendre_ode(self, l):
        fam = SphereZonal()
        h = 1 / math.sqrt(l * (l + 1))
        z = np.linspace(-0.9, 0.9, 37)
        X = np.stack([np.sqrt(1 - z**2), 0 * z, z], -1)

        def dY(zz):
            XX = np.stack([np.sqrt(1 - zz**2), 0 * zz, zz], -1)
            g = fam.gradient(h, XX)
            # dP/dz along the meridian theta = 0
            tang = np.stack([-zz / np.sqrt(1 - zz**2), 0 * zz, 1 + 0 * zz], -1)
            return np.real(np.sum(g * tang, -1))

        y = np.real(fam.values(h, X))
        eps = 1e-5
        d1 = dY(z)
        d2 = (dY(z + eps) - dY(z - eps)) / (2 * eps)
        resid = (1 - z**2) * d2 - 2 * z * d1 + l * (l + 1) * y
        assert np.linalg.norm(resid) / (l * (l + 1) * np.linalg.norm(y)) <= 1e-6


class TestRandomShell:
    def test_lattice_shell_brute_force(self):
        for n in [1, 2, 5, 25, 65, 325]:
            brute = sorted((a, b) for a in range(-20, 21) for b in range(-20, 21) if a * a + b * b == n)
            assert [tuple(v) for v in lattice_shell(n).tolist()] == brute

    def test_reproducible(self):
        a = TorusRandomShell(17, 25).coefficients_at(65)[1]
        b = TorusRandomShell(17, 25).coefficients_at(65)[1]
        assert np.array_equal(a, b)
        assert not np.array_equal(a, TorusRandomShell(18, 25).coefficients_at(65)[1])

    def test_unit_norm(self):
        _, c = TorusRandomShell(2).coefficients_at(325)
        assert abs(np.linalg.norm(c) - 1) < 1e-15


def test_descriptors():
    for d in [{"family": "sphere_beam"}, {"family": "torus_shell", "seed": 17, "shell": 25},
              {"family": "torus_plane_wave", "direction": [3, 4]},
              {"family": "torus_superposition", "modes": [[0, 1], [0, -1]], "amplitudes": [1, 1],
               "scaling": "shift", "direction": [1, 0]}]:
        fam = family_from_descriptor(d)
        again = family_from_descriptor(fam.descriptor())
        assert again.admissible_h(3) == fam.admissible_h(3)
