"""Semiclassical defect measures on the model manifolds.

Measures are finite sums of flow-invariant components:

* :class:`DirectionDelta` - torus only, ``rho(x) dx`` times a point mass at a
  fixed unit covector ``xi0``; ``rho`` is a trigonometric polynomial
  constant along ``xi0``.
* :class:`GeodesicAtom` - sphere only, uniform measure on the lift of one
  oriented great circle.
* :class:`MeridianFamily` - sphere only, uniform mixture of the lifts of all
  oriented great circles through the poles.
* :class:`LiouvilleDensity` - normalized Liouville measure on ``S*M``.

The tube measure of a set ``A`` of covectors over ``H`` is
``mu_H(A) = mu(union_{|s| <= t0} G^s(A)) / (2 t0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .eigenfamily import (
    SphereGaussianBeam,
    SphereZonal,
    TorusPlaneWave,
    TorusRandomShell,
    TorusSuperposition,
)
from .errors import GlancingError
from .manifold import (
    SPHERE,
    TORUS,
    ModelManifold,
    PhasePoint,
    TorusLine,
    ambient_to_covector,
    geodesic_flow,
    sphere_embed,
    sphere_flow_ambient,
)
from .quantize import Slab, Symbol

MC_SAMPLES = 1_000_000
MC_BATCHES = 10


def _interval_exp(nu, a, b):
    """``int_a^b exp(2 pi i nu s) ds`` for real arrays ``nu``."""
    nu = np.asarray(nu, dtype=float)
    out = np.full(nu.shape, b - a, dtype=complex)
    nz = np.abs(nu) > 1e-14
    z = nu[nz]
    out[nz] = (np.exp(2j * np.pi * z * b) - np.exp(2j * np.pi * z * a)) / (2j * np.pi * z)
    return out


# --------------------------------------------------------------------------
# components


@dataclass(frozen=True)
class DirectionDelta:
    """``rho(x) dx (x) delta_{xi0}`` on the torus.

    ``density`` holds ``((j1, j2), c)`` pairs of a real trigonometric
    polynomial; its mean is the component's mass.  Flow invariance requires
    every mode to be orthogonal to ``xi0``.
    """

    xi0: tuple
    density: tuple = (((0, 0), 1.0),)
    manifold: ModelManifold = field(default=TORUS, init=False)

    def __post_init__(self):
        xi0 = np.asarray(self.xi0, dtype=float)
        if abs(np.linalg.norm(xi0) - 1) > 1e-12:
            raise ValueError("xi0 must be a unit covector")
        for j, c in self.density:
            if abs(c) > 0 and abs(np.dot(j, xi0)) > 1e-12:
                raise ValueError("base density must be invariant along xi0")

    @property
    def modes(self):
        return np.array([j for j, _ in self.density], dtype=float).reshape(-1, 2)

    @property
    def coeffs(self):
        return np.array([c for _, c in self.density], dtype=complex)

    @property
    def mass(self) -> float:
        return float(sum(c for j, c in self.density if tuple(j) == (0, 0)).real)

    def rho(self, X):
        X = np.asarray(X, dtype=float)
        return np.real(np.exp(2j * np.pi * X @ self.modes.T) @ self.coeffs)

    def line_integral(self, H: TorusLine, xp_lo, xp_hi, t_lo, t_hi):
        """``|xi0 . n| int_{x'} int_t rho(b + x' d + t xi0) dt dx'``."""
        j, c = self.modes, self.coeffs
        xi0 = np.asarray(self.xi0, dtype=float)
        vals = (np.exp(2j * np.pi * j @ np.asarray(H.base)) * _interval_exp(j @ H.d, xp_lo, xp_hi)
                * _interval_exp(j @ xi0, t_lo, t_hi))
        return float(abs(xi0 @ H.n) * np.real(vals @ c))


@dataclass(frozen=True)
class GeodesicAtom:
    """Uniform measure of total ``mass`` on ``s -> (P0 cos s + V0 sin s, velocity)``."""

    P0: tuple = (1.0, 0.0, 0.0)
    V0: tuple = (0.0, -1.0, 0.0)
    mass: float = 1.0
    manifold: ModelManifold = field(default=SPHERE, init=False)

    def __post_init__(self):
        P, V = np.asarray(self.P0, float), np.asarray(self.V0, float)
        if abs(P @ P - 1) > 1e-12 or abs(V @ V - 1) > 1e-12 or abs(P @ V) > 1e-12:
            raise ValueError("P0, V0 must be orthonormal")

    def orbit(self, s):
        return sphere_flow_ambient(np.asarray(self.P0, float), np.asarray(self.V0, float), s)


@dataclass(frozen=True)
class MeridianFamily:
    """Uniform mixture over oriented great circles through the poles.

    Parametrized by ``(phi, s)`` in ``[0, 2 pi)^2`` with orbit
    ``P = (cos phi cos s, sin phi cos s, sin s)`` and density
    ``mass / (4 pi^2)``; ``phi`` and ``phi + pi`` give opposite orientations
    of the same circle.
    """

    mass: float = 1.0
    manifold: ModelManifold = field(default=SPHERE, init=False)

    @staticmethod
    def frames(phi):
        phi = np.asarray(phi, dtype=float)
        P0 = np.stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)], -1)
        V0 = np.broadcast_to(np.array([0.0, 0.0, 1.0]), P0.shape)
        return P0, V0


@dataclass(frozen=True)
class LiouvilleDensity:
    """Normalized Liouville measure of total ``mass``."""

    manifold: ModelManifold = TORUS
    mass: float = 1.0


@dataclass(frozen=True)
class DefectMeasure:
    components: tuple
    manifold: ModelManifold

    def __post_init__(self):
        for c in self.components:
            if c.manifold.kind != self.manifold.kind:
                raise ValueError("component lives on a different manifold")

    @property
    def total_mass(self) -> float:
        return float(sum(c.mass for c in self.components))


# --------------------------------------------------------------------------
# analytic limits of the eigenfunction families


def analytic_defect_measure(family, h: float | None = None) -> DefectMeasure:
    """Defect measure of ``family`` along its admissible ladder.

    For :class:`TorusRandomShell` the coefficients change with the level, so
    ``h`` selects the level and the result is the direction mixture
    weighted by ``|u_k|^2``.
    """
    if isinstance(family, TorusPlaneWave):
        d = np.asarray(family.direction, float)
        return DefectMeasure((DirectionDelta(tuple(d / np.linalg.norm(d))),), TORUS)
    if isinstance(family, TorusSuperposition):
        modes = np.asarray(family.modes, float)
        amps = np.asarray(family.coefficients, complex)
        if family.scaling == "shift":
            d = np.asarray(family.direction, float)
            dens = {}
            for ki, ai in zip(modes, amps):
                for kj, aj in zip(modes, amps):
                    key = tuple(int(v) for v in ki - kj)
                    dens[key] = dens.get(key, 0) + ai * np.conj(aj)
            return DefectMeasure((DirectionDelta(tuple(d / np.linalg.norm(d)), tuple(dens.items())),), TORUS)
        return _direction_mixture(modes, amps)
    if isinstance(family, TorusRandomShell):
        if h is None:
            raise ValueError("random-shell measure needs the level h")
        k, c = family.coefficients_at(family.level_of(h))
        return _direction_mixture(np.asarray(k, float), c)
    if isinstance(family, SphereGaussianBeam):
        return DefectMeasure((GeodesicAtom(),), SPHERE)
    if isinstance(family, SphereZonal):
        return DefectMeasure((MeridianFamily(),), SPHERE)
    raise ValueError(f"no analytic measure for {type(family).__name__}")


def _direction_mixture(modes, amps) -> DefectMeasure:
    amps = np.asarray(amps, complex)
    w = np.abs(amps) ** 2 / np.sum(np.abs(amps) ** 2)
    dirs = {}
    for k, wi in zip(modes, w):
        key = tuple(np.round(k / np.linalg.norm(k), 15))
        dirs[key] = dirs.get(key, 0.0) + wi
    return DefectMeasure(tuple(DirectionDelta(tuple(np.asarray(d) / np.linalg.norm(d)), (((0, 0), float(m)),))
                               for d, m in dirs.items() if m > 0), TORUS)


# --------------------------------------------------------------------------
# symbol integration


def fermi_symbol(H, f: Callable) -> Callable:
    """Turn ``f(x', x_n, xi', xi_n)`` into a chart symbol ``a(x, xi)``.

    Points outside the collar of ``H`` get the value 0.
    """

    def a(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        xn = H.normal_coordinate(x)
        inside = np.abs(xn) < H.collar
        xp, xn = H.fermi_coords(x, check=False)
        sp = H.cotangent_split(x, xi, check=False)
        return np.where(inside, f(xp, xn, sp.xi_t, sp.xi_n), 0.0)

    return a


def _unit_angles(n):
    psi = 2 * np.pi * (np.arange(n) + 0.5) / n
    return np.stack([np.cos(psi), np.sin(psi)], -1)


def _integrate_component(comp, a, slab, n):
    if isinstance(comp, DirectionDelta):
        xi0 = np.asarray(comp.xi0, float)
        if isinstance(a, Symbol):
            j, c = comp.modes, comp.coeffs
            tot = 0j
            for g, psi in a.terms:
                tot += complex(psi(xi0)) * np.sum(c * g.fourier(-j, slab))
            return tot
        if slab is not None:
            raise ValueError("slab restriction needs a structured symbol")
        x = (np.arange(n) + 0.5) / n
        X = np.stack(np.meshgrid(x, x, indexing="ij"), -1)
        return np.mean(comp.rho(X) * a(X, np.broadcast_to(xi0, X.shape)))
    if slab is not None:
        raise ValueError("slab restriction applies to torus direction components")
    if isinstance(comp, LiouvilleDensity):
        if comp.manifold.is_torus:
            m = max(32, n // 4)
            x = (np.arange(m) + 0.5) / m
            X = np.stack(np.meshgrid(x, x, indexing="ij"), -1)[:, :, None, :]
            xi = _unit_angles(m)[None, None, :, :]
            return comp.mass * np.mean(a(np.broadcast_to(X, (m, m, m, 2)), np.broadcast_to(xi, (m, m, m, 2))))
        m = max(32, n // 4)
        z, wz = np.polynomial.legendre.leggauss(m)
        th = 2 * np.pi * (np.arange(m) + 0.5) / m
        TH, Z = np.meshgrid(th, z, indexing="ij")
        x = np.stack([TH, np.arcsin(Z)], -1)[:, :, None, :]
        u = _unit_angles(m)
        # unit covector with angle psi from the theta direction
        xi = np.stack([u[:, 0][None, None, :] * np.sqrt(1 - Z**2)[:, :, None],
                       np.broadcast_to(u[:, 1], (m, m, m))], -1)
        vals = a(np.broadcast_to(x, (m, m, m, 2)), xi)
        return comp.mass * np.sum(vals.mean(-1) * wz[None, :]) / (2 * m)
    if isinstance(comp, GeodesicAtom):
        s = 2 * np.pi * (np.arange(n) + 0.5) / n
        P, V = comp.orbit(s)
        x, xi = ambient_to_covector(P, V)
        return comp.mass * np.mean(a(x, xi))
    if isinstance(comp, MeridianFamily):
        m = max(64, n // 4)
        phi = 2 * np.pi * (np.arange(m) + 0.5) / m
        s = 2 * np.pi * (np.arange(n) + 0.5) / n
        P0, V0 = MeridianFamily.frames(phi)
        P, V = sphere_flow_ambient(P0[:, None, :], V0[:, None, :], s[None, :])
        x, xi = ambient_to_covector(P, V)
        return comp.mass * np.mean(a(x, xi))
    raise TypeError(f"unknown component {type(comp).__name__}")


def integrate_symbol(mu: DefectMeasure, a, slab: Slab | None = None, n: int = 256) -> complex:
    """``int a dmu``.

    ``a`` is a :class:`~hypavg.quantize.Symbol` (torus, exact for direction
    components, optionally restricted to ``slab``) or a callable
    ``a(x, xi)`` on chart coordinates, integrated by periodic trapezoid
    rules with ``n`` nodes per periodic direction.
    """
    val = sum(_integrate_component(c, a, slab, n) for c in mu.components)
    return complex(val)


def flowed_symbol(a: Callable, manifold: ModelManifold, t: float) -> Callable:
    """``a o G^t``."""

    def at(x, xi):
        q = geodesic_flow(manifold, PhasePoint(x, xi), t)
        return a(q.x, q.xi)

    return at


# --------------------------------------------------------------------------
# tube measures


@dataclass(frozen=True)
class TubeRegion:
    """Covectors over ``H`` with ``|xi'|`` in a band and ``x'`` in arcs.

    The band is ``[0, delta]`` unless ``band=(a, b)`` is given.  ``arcs`` is
    an optional tuple of ``(lo, hi)`` intervals of the arclength parameter.
    """

    H: object
    t0: float
    delta: float | None = None
    band: tuple | None = None
    arcs: tuple | None = None

    def __post_init__(self):
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if (self.delta is None) == (self.band is None):
            raise ValueError("give exactly one of delta or band")

    @property
    def limits(self):
        return (0.0, float(self.delta)) if self.band is None else tuple(float(v) for v in self.band)

    @property
    def arc_length(self) -> float:
        if self.arcs is None:
            return self.H.length
        return float(sum(b - a for a, b in self.arcs))

    def accepts(self, xp, xi_t):
        lo, hi = self.limits
        ok = (np.abs(xi_t) >= lo - 1e-14) & (np.abs(xi_t) <= hi + 1e-14)
        if self.arcs is not None:
            L = self.H.length
            xp = np.mod(xp, L)
            ok = ok & np.any([(xp >= a) & (xp <= b) for a, b in self.arcs], axis=0)
        return ok


@dataclass
class TubeResult:
    value: float
    stderr: float = 0.0
    indeterminate: bool = False


def _union_length(centers, half, period):
    """Length of ``union [c - half, c + half]`` on a circle, per row."""
    out = np.zeros(centers.shape[0])
    for i, row in enumerate(centers):
        c = np.sort(np.mod(row[np.isfinite(row)], period))
        if c.size == 0:
            continue
        c = c[np.concatenate([[True], np.diff(c) > 1e-12])]
        if c.size > 1 and c[0] + period - c[-1] < 1e-12:
            c = c[:-1]
        gaps = np.diff(np.concatenate([c, [c[0] + period]]))
        out[i] = min(period, np.sum(np.minimum(gaps, 2 * half)))
    return out


def _great_circle_tube(P0, V0, region: TubeRegion):
    """Parameter length of ``{s : G^tau(orbit(s)) in A for some |tau| <= t0}``."""
    H = region.H
    P0 = np.atleast_2d(P0)
    V0 = np.atleast_2d(V0)
    roots = H.crossing_times_ambient(P0, V0, 0.0, 2 * np.pi)
    roots = np.where(roots < 2 * np.pi - 1e-13, roots, np.nan)
    P, V = sphere_flow_ambient(P0[:, None, :], V0[:, None, :], np.nan_to_num(roots))
    xp, _, sp = H.split_ambient(P, V)
    ok = region.accepts(xp, sp.xi_t) & np.isfinite(roots)
    lengths = _union_length(np.where(ok, roots, np.nan), region.t0, 2 * np.pi)
    # orbits lying inside H: every point is glancing
    s = np.linspace(0, 2 * np.pi, 9)[:-1]
    Ps, Vs = sphere_flow_ambient(P0[:, None, :], V0[:, None, :], s[None, :])
    xps, xns, sps = H.split_ambient(Ps, Vs)
    inside = np.max(np.abs(xns), -1) < 1e-12
    if np.any(inside):
        full = np.all(region.accepts(xps, sps.xi_t), -1)
        lengths = np.where(inside, np.where(full, 2 * np.pi, 0.0), lengths)
    return lengths


def _direction_tube(comp: DirectionDelta, region: TubeRegion, n_grid: int = 512):
    H = region.H
    xi0 = np.asarray(comp.xi0, float)
    vn = abs(xi0 @ H.n)
    lo, hi = region.limits
    if vn < 1e-14 or not lo - 1e-14 <= abs(xi0 @ H.d) <= hi + 1e-14:
        return 0.0
    t0 = region.t0
    if 2 * t0 * vn <= H.spacing:
        arcs = region.arcs or ((0.0, H.length),)
        return sum(comp.line_integral(H, a, b, -t0, t0) for a, b in arcs) / (2 * t0)
    # overlapping thickenings: grid membership
    x = (np.arange(n_grid) + 0.5) / n_grid
    X = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
    taus = H.crossing_times(X, np.broadcast_to(xi0, X.shape), -t0, t0)
    foot = X[:, None, :] + np.nan_to_num(taus)[..., None] * xi0
    xp, _ = H.fermi_coords(foot, check=False)
    hit = np.any(np.isfinite(taus) & region.accepts(xp, np.full(xp.shape, xi0 @ H.d)), -1)
    return float(np.mean(comp.rho(X) * hit)) / (2 * t0)


def _liouville_tube_mc(comp: LiouvilleDensity, region: TubeRegion, n_samples, seed, batches):
    H = region.H
    t0 = region.t0
    per = n_samples // batches
    means = []
    for b in range(batches):
        rng = np.random.default_rng([seed, b])
        hit = _liouville_membership(comp.manifold, H, rng, per,
                                    lambda P, V, tl, th: _member_any(H, P, V, tl, th, region), -t0, t0)
        means.append(hit.mean())
    means = np.array(means)
    scale = comp.mass / (2 * t0)
    return float(scale * means.mean()), float(scale * means.std(ddof=1) / math.sqrt(batches))


def _stratified_uniform(rng, n, dims):
    """``n`` stratified samples in ``[0,1)^dims`` (one per cell, cells along axis 0)."""
    u = rng.random((n, dims))
    u[:, 0] = (np.arange(n) + u[:, 0]) / n
    u[:, 0] = u[rng.permutation(n), 0]
    return u


def _liouville_membership(manifold, H, rng, n, test, t_lo, t_hi):
    u = _stratified_uniform(rng, n, 3)
    psi = 2 * np.pi * u[:, 2]
    if manifold.is_torus:
        X = u[:, :2]
        xi = np.stack([np.cos(psi), np.sin(psi)], -1)
        return test(X, xi, t_lo, t_hi)
    z = 2 * u[:, 0] - 1
    th = 2 * np.pi * u[:, 1]
    x = np.stack([th, np.arcsin(z)], -1)
    P = sphere_embed(x)
    e_th = np.stack([-np.sin(th), np.cos(th), np.zeros_like(th)], -1)
    e_om = np.cross(P, e_th)
    V = np.cos(psi)[:, None] * e_th + np.sin(psi)[:, None] * e_om
    return test(P, V, t_lo, t_hi)


def _member_any(H, P, V, t_lo, t_hi, region):
    """Does the orbit cross ``H`` inside ``A`` at some time in ``[t_lo, t_hi]``?"""
    if isinstance(H, TorusLine):
        taus = H.crossing_times(P, V, t_lo, t_hi)
        foot = P[:, None, :] + np.nan_to_num(taus)[..., None] * V[:, None, :]
        xp, _ = H.fermi_coords(foot, check=False)
        xi_t = np.broadcast_to((V @ H.d)[:, None], xp.shape)
        return np.any(np.isfinite(taus) & region.accepts(xp, xi_t), -1)
    taus = H.crossing_times_ambient(P, V, t_lo, t_hi)
    Pc, Vc = sphere_flow_ambient(P[:, None, :], V[:, None, :], np.nan_to_num(taus))
    xp, _, sp = H.split_ambient(Pc, Vc)
    return np.any(np.isfinite(taus) & region.accepts(xp, sp.xi_t), -1)


def liouville_flux(manifold: ModelManifold, arc_length: float, lo: float, hi: float) -> float:
    """Closed-form Liouville tube quotient for ``lo <= |xi'| <= hi`` off glancing.

    Per unit length and per sheet the flux density is
    ``|xi_n| dpsi / (2 pi vol) = dxi' / (2 pi vol)``; four arcs of
    ``psi`` contribute.
    """
    return 4.0 * (hi - lo) * arc_length / (2 * math.pi * manifold.volume())


def tube_measure(mu: DefectMeasure, region: TubeRegion, n_samples: int = MC_SAMPLES, seed: int = 0,
                 batches: int = MC_BATCHES, mc_tol: float = 5e-3, n_phi: int = 4096) -> TubeResult:
    """``mu(union_{|s| <= t0} G^s(A)) / (2 t0)`` component by component."""
    total = 0.0
    var = 0.0
    for comp in mu.components:
        if isinstance(comp, DirectionDelta):
            total += _direction_tube(comp, region)
        elif isinstance(comp, GeodesicAtom):
            ell = _great_circle_tube(np.asarray(comp.P0, float), np.asarray(comp.V0, float), region)[0]
            total += comp.mass * ell / (2 * np.pi) / (2 * region.t0)
        elif isinstance(comp, MeridianFamily):
            phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
            P0, V0 = MeridianFamily.frames(phi)
            ell = _great_circle_tube(P0, V0, region)
            total += comp.mass * np.mean(ell) / (2 * np.pi) / (2 * region.t0)
        elif isinstance(comp, LiouvilleDensity):
            v, se = _liouville_tube_mc(comp, region, n_samples, seed, batches)
            total += v
            var += se**2
        else:
            raise TypeError(f"unknown component {type(comp).__name__}")
    se = math.sqrt(var)
    return TubeResult(float(total), se, se > mc_tol)


# --------------------------------------------------------------------------
# conormal diagnostic


@dataclass
class DiagnosticReport:
    rows: list  # (delta, t0, quotient, stderr)
    estimate: float
    stderr: float
    verdict: str
    monotone: bool
    atol: float

    def csv_rows(self):
        return [{"delta": d, "t0": t, "quotient": q, "stderr": s} for d, t, q, s in self.rows]

    def verdict_block(self) -> dict:
        return {"verdict": self.verdict, "estimate": self.estimate, "stderr": self.stderr,
                "monotone": self.monotone, "atol": self.atol}


def conormal_diagnostic(mu: DefectMeasure, H, deltas=(0.4, 0.2, 0.1, 0.05), t0s=(0.05,), atol: float = 1e-3,
                        **mc) -> DiagnosticReport:
    """Tube quotients over a ``(delta, t0)`` grid and a verdict on ``mu_H(N*H)``.

    The ``delta -> 0`` value is extrapolated linearly from the two smallest
    ``delta`` at the smallest ``t0`` and clipped to ``[0, q(delta_min)]``.
    The verdict is ``diffuse`` when the estimate is at most
    ``max(atol, 3 stderr)``, ``concentrated`` when it is at least ten times
    that, and ``indeterminate`` otherwise or when quotients fail to be
    monotone in ``delta``.
    """
    deltas = sorted(deltas, reverse=True)
    t0s = sorted(t0s)
    if not deltas or not t0s:
        raise ValueError("empty diagnostic grid")
    if deltas[0] >= 1:
        raise GlancingError("delta must be below 1")
    rows = []
    table = {}
    for t0 in t0s:
        for d in deltas:
            r = tube_measure(mu, TubeRegion(H, t0, delta=d), **mc)
            rows.append((d, t0, r.value, r.stderr))
            table[(d, t0)] = r
    monotone = True
    for t0 in t0s:
        for d1, d2 in zip(deltas[:-1], deltas[1:]):
            a, b = table[(d1, t0)], table[(d2, t0)]
            if b.value > a.value + 3 * math.hypot(a.stderr, b.stderr) + 1e-12:
                monotone = False
    t0 = t0s[0]
    q1 = table[(deltas[-1], t0)]
    if len(deltas) > 1:
        q2 = table[(deltas[-2], t0)]
        d1, d2 = deltas[-1], deltas[-2]
        est = q1.value - d1 * (q2.value - q1.value) / (d2 - d1)
        est = min(max(est, 0.0), q1.value)
        se = math.hypot(q1.stderr * d2 / (d2 - d1), q2.stderr * d1 / (d2 - d1))
    else:
        est, se = q1.value, q1.stderr
    tol = max(atol, 3 * se)
    if not monotone or any(r.indeterminate for r in table.values()):
        verdict = "indeterminate"
    elif est <= tol:
        verdict = "diffuse"
    elif est >= 10 * tol:
        verdict = "concentrated"
    else:
        verdict = "indeterminate"
    return DiagnosticReport(rows, float(est), float(se), verdict, monotone, atol)


# --------------------------------------------------------------------------
# factorization near H


@dataclass(frozen=True)
class FlowBox:
    """``B = {x' in [xp_lo, xp_hi], xi' in [xi_lo, xi_hi], sign(xi_n) = sign}`` over ``H``."""

    xp: tuple
    xi_t: tuple
    sign: int = 1

    def contains(self, xp, xi_t, xi_n):
        return ((xp >= self.xp[0]) & (xp <= self.xp[1]) & (xi_t >= self.xi_t[0]) & (xi_t <= self.xi_t[1])
                & (np.sign(xi_n) == self.sign))

    @property
    def volume(self) -> float:
        return (self.xp[1] - self.xp[0]) * (self.xi_t[1] - self.xi_t[0])


@dataclass
class FactorizationResult:
    flow_out: float  # mu(iota(I x B))
    sigma: float  # mu_Sigma(B) from the reference interval
    residual: float
    stderr: float = 0.0
    closed_form: float | None = None
    liouville_constant: float | None = None
    marginal_max_z: float | None = None
    samples: int = 0


def _flowout_direction(comp: DirectionDelta, H: TorusLine, I, B: FlowBox):
    xi0 = np.asarray(comp.xi0, float)
    if not B.contains(np.array(B.xp[0]), np.array(xi0 @ H.d), np.array(xi0 @ H.n)):
        return 0.0
    return comp.line_integral(H, B.xp[0], B.xp[1], I[0], I[1])


def _flowout_member(H: TorusLine, X, xi, I, B: FlowBox):
    """``(x, xi) = G^t(b)`` with ``t in I`` and ``b in B``; also returns ``t``."""
    taus = H.crossing_times(X, xi, -I[1], -I[0])
    foot = X[:, None, :] + np.nan_to_num(taus)[..., None] * xi[:, None, :]
    xp, _ = H.fermi_coords(foot, check=False)
    xt = np.broadcast_to((xi @ H.d)[:, None], xp.shape)
    xn = np.broadcast_to((xi @ H.n)[:, None], xp.shape)
    ok = np.isfinite(taus) & B.contains(xp, xt, xn)
    t = np.where(ok, -taus, np.nan)
    return np.any(ok, -1), np.nanmax(np.where(ok, t, -np.inf), -1)


def factorization_check(mu: DefectMeasure, H: TorusLine, I, B: FlowBox, delta: float, eps: float | None = None,
                        n_samples: int = MC_SAMPLES, seed: int = 0, batches: int = MC_BATCHES,
                        n_bins: int = 8) -> FactorizationResult:
    """Compare ``mu(iota(I x B))`` with ``|I| mu_Sigma(B)``.

    ``iota(t, b) = G^t(b)`` flows covectors over ``H`` for time ``t``.
    ``mu_Sigma(B)`` is estimated as ``mu(iota([-eps, eps] x B)) / (2 eps)``.
    For Liouville components the flow-out is sampled and the residual comes
    with a standard error; the Liouville constant ``c`` in
    ``d(mu_L)_Sigma = c dx' dxi'`` is reported together with the largest
    z-score of the ``x_n``-marginal against the ``|xi_n|^{-1}`` density.
    """
    if not isinstance(H, TorusLine):
        raise NotImplementedError("factorization checks are implemented on the torus")
    I = (float(I[0]), float(I[1]))
    if I[1] < I[0]:
        raise ValueError("empty interval")
    if max(abs(B.xi_t[0]), abs(B.xi_t[1])) ** 2 >= 1 - delta**2:
        raise GlancingError("flow box reaches the glancing set")
    if max(abs(I[0]), abs(I[1])) >= H.collar:
        raise ValueError("flow interval leaves the collar")
    if I[1] == I[0]:
        return FactorizationResult(0.0, 0.0, 0.0)
    eps = eps if eps is not None else 0.5 * (I[1] - I[0])
    ref = (-eps, eps)
    length = I[1] - I[0]
    flow = sigma = 0.0
    var_flow = var_sigma = 0.0
    closed = 0.0
    const = None
    zmax = None
    total_samples = 0
    for comp in mu.components:
        if isinstance(comp, DirectionDelta):
            flow += _flowout_direction(comp, H, I, B)
            sigma += _flowout_direction(comp, H, ref, B) / (2 * eps)
            closed += _flowout_direction(comp, H, I, B)
        elif isinstance(comp, LiouvilleDensity):
            per = n_samples // batches
            fm, rm, ts = [], [], []
            for b in range(batches):
                rng = np.random.default_rng([seed, b])
                hit, t = _liouville_membership(TORUS, H, rng, per, lambda X, xi, *_: _flowout_member(H, X, xi, I, B),
                                               0, 0)
                fm.append(hit.mean())
                ts.append(t[hit])
                rng = np.random.default_rng([seed, batches + b])
                hit_r, _ = _liouville_membership(TORUS, H, rng, per,
                                                 lambda X, xi, *_: _flowout_member(H, X, xi, ref, B), 0, 0)
                rm.append(hit_r.mean())
            fm, rm = np.array(fm) * comp.mass, np.array(rm) * comp.mass
            total_samples += 2 * per * batches
            flow += fm.mean()
            sigma += rm.mean() / (2 * eps)
            var_flow += fm.var(ddof=1) / batches
            var_sigma += rm.var(ddof=1) / batches / (2 * eps) ** 2
            c = 1.0 / (2 * np.pi)
            closed += comp.mass * c * length * B.volume
            const = fm.mean() / (comp.mass * length * B.volume)
            zmax = _marginal_z(np.concatenate(ts), per * batches, comp.mass, c, I, B, n_bins)
        else:
            raise NotImplementedError(f"factorization for {type(comp).__name__}")
    residual = abs(flow - length * sigma)
    se = math.sqrt(var_flow + length**2 * var_sigma)
    return FactorizationResult(float(flow), float(sigma), float(residual), float(se), float(closed), const, zmax,
                               total_samples)


def _marginal_z(t_hits, n_total, mass, c, I, B: FlowBox, n_bins):
    """Max z-score of the flow-time histogram against its predicted shape.

    In flow-box coordinates ``dmu = c dx' dxi' dt``, so flow time is
    uniform over ``I``; in ``x_n = t xi_n`` this is the ``|xi_n|^{-1}``
    density of the factorized form.
    """
    edges = np.linspace(I[0], I[1], n_bins + 1)
    counts, _ = np.histogram(t_hits, edges)
    p = mass * c * B.volume * np.diff(edges)
    expected = n_total * p
    sd = np.sqrt(n_total * p * (1 - p))
    return float(np.max(np.abs(counts - expected) / sd))
