"""Model geometries: the flat square torus and the round 2-sphere.

Torus points are chart coordinates ``(x1, x2)`` in ``[0, 1)^2``; covectors are
``(xi1, xi2)`` with the flat metric.  Sphere points use ``(theta, omega)``
with ``omega`` the latitude, covectors ``(xi, zeta)`` dual to
``(theta, omega)``, and the metric ``d omega^2 + cos^2 omega d theta^2``.
Internally the sphere works in the ambient embedding

    (theta, omega) -> (cos theta cos omega, sin theta cos omega, sin omega)

where the geodesic flow is a rotation in the plane spanned by position and
velocity.

Hypersurfaces are closed curves with an arc-length parameter ``x'``, a unit
normal ``nu`` and a Fermi collar ``|x_n| < c``.  The side ``x_n < 0`` is the
interior ``Omega_H``; ``nu`` points out of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NormalizationError, OutOfCollarError

UNIT_TOL = 1e-10

TORUS2 = "torus2"
SPHERE2 = "sphere2"


@dataclass(frozen=True)
class ModelManifold:
    """Flat torus or round sphere."""

    kind: str

    def __post_init__(self):
        if self.kind not in (TORUS2, SPHERE2):
            raise ValueError(f"unknown manifold kind {self.kind!r}")

    @property
    def is_torus(self) -> bool:
        return self.kind == TORUS2

    def covector_norm(self, x, xi):
        """Metric norm ``|xi|_g`` at ``x`` (arrays of shape (..., 2))."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.is_torus:
            return np.hypot(xi[..., 0], xi[..., 1])
        c = np.cos(x[..., 1])
        return np.sqrt(xi[..., 1] ** 2 + xi[..., 0] ** 2 / c**2)

    def volume(self) -> float:
        return 1.0 if self.is_torus else 4.0 * math.pi


TORUS = ModelManifold(TORUS2)
SPHERE = ModelManifold(SPHERE2)


@dataclass
class PhasePoint:
    """Point ``x`` and covector ``xi``; both may carry leading batch axes."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)


# --------------------------------------------------------------------------
# sphere chart <-> ambient


def sphere_embed(x):
    """Chart ``(theta, omega)`` to unit vectors in R^3."""
    x = np.asarray(x, dtype=float)
    th, om = x[..., 0], x[..., 1]
    co = np.cos(om)
    return np.stack([np.cos(th) * co, np.sin(th) * co, np.sin(om)], axis=-1)


def sphere_frame(x):
    """Coordinate vectors ``d/dtheta`` and ``d/domega`` in R^3."""
    x = np.asarray(x, dtype=float)
    th, om = x[..., 0], x[..., 1]
    ct, st, co, so = np.cos(th), np.sin(th), np.cos(om), np.sin(om)
    e_th = np.stack([-st * co, ct * co, np.zeros_like(th)], axis=-1)
    e_om = np.stack([-ct * so, -st * so, co], axis=-1)
    return e_th, e_om


def sphere_chart(P):
    """Unit vectors in R^3 to chart ``(theta, omega)`` with theta in [0, 2 pi)."""
    P = np.asarray(P, dtype=float)
    th = np.mod(np.arctan2(P[..., 1], P[..., 0]), 2 * np.pi)
    om = np.arcsin(np.clip(P[..., 2], -1.0, 1.0))
    return np.stack([th, om], axis=-1)


def covector_to_ambient(x, xi):
    """Raise a sphere covector to an ambient tangent vector."""
    e_th, e_om = sphere_frame(x)
    co2 = np.cos(np.asarray(x)[..., 1]) ** 2
    xi = np.asarray(xi, dtype=float)
    return (xi[..., 0] / co2)[..., None] * e_th + xi[..., 1][..., None] * e_om


def ambient_to_covector(P, V):
    """Lower an ambient tangent vector at ``P`` to chart covector components."""
    x = sphere_chart(P)
    e_th, e_om = sphere_frame(x)
    return x, np.stack([np.sum(V * e_th, -1), np.sum(V * e_om, -1)], axis=-1)


def wrap_torus(x):
    return np.mod(x, 1.0)


def _centered_mod(a, period):
    return np.mod(a + 0.5 * period, period) - 0.5 * period


# --------------------------------------------------------------------------
# geodesic flow


def _check_unit(m: ModelManifold, p: PhasePoint, tol: float = UNIT_TOL):
    err = np.abs(m.covector_norm(p.x, p.xi) - 1.0)
    if np.any(err > tol):
        raise NormalizationError(
            f"phase point is not unit: max | |xi|_g - 1 | = {float(np.max(err)):.3e}"
        )


def sphere_flow_ambient(P, V, t):
    """Great-circle flow of ambient position/velocity pairs."""
    t = np.asarray(t, dtype=float)[..., None]
    c, s = np.cos(t), np.sin(t)
    return P * c + V * s, -P * s + V * c


def geodesic_flow(m: ModelManifold, p: PhasePoint, t) -> PhasePoint:
    """Unit-speed geodesic flow ``G^t`` on the unit cosphere bundle."""
    _check_unit(m, p)
    if m.is_torus:
        t = np.asarray(t, dtype=float)[..., None]
        x1 = wrap_torus(p.x + t * p.xi)
        return PhasePoint(x1, np.broadcast_to(p.xi, x1.shape).copy())
    P = sphere_embed(p.x)
    V = covector_to_ambient(p.x, p.xi)
    P1, V1 = sphere_flow_ambient(P, V, t)
    x1, xi1 = ambient_to_covector(P1, V1)
    return PhasePoint(x1, xi1)


# --------------------------------------------------------------------------
# hypersurfaces


@dataclass
class CotangentSplit:
    """Tangential and normal parts of a covector over a Fermi collar."""

    xi_t: np.ndarray
    xi_n: np.ndarray
    norm_t: np.ndarray


@dataclass
class HypersurfaceQuadrature:
    """Periodic trapezoid rule on a closed curve.

    ``points`` are native coordinates (torus chart, sphere ambient R^3) and
    ``normals`` are unit normal vectors in the same space.
    """

    params: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray

    @property
    def chart_points(self):
        if self.points.shape[-1] == 3:
            return sphere_chart(self.points)
        return self.points


class Hypersurface:
    """Closed curve in a model manifold; see the module docstring."""

    host: ModelManifold
    collar: float

    @property
    def length(self) -> float:
        raise NotImplementedError

    def quadrature(self, n: int) -> HypersurfaceQuadrature:
        """Trapezoid nodes at half-shifted equispaced parameters."""
        if n < 8:
            raise ValueError("hypersurface quadrature needs at least 8 nodes")
        s = (np.arange(n) + 0.5) * (self.length / n)
        pts, nrm = self.native_point_normal(s)
        return HypersurfaceQuadrature(s, pts, np.full(n, self.length / n), nrm)

    def native_point_normal(self, s):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


def hypersurface_quadrature(H: Hypersurface, n: int) -> HypersurfaceQuadrature:
    return H.quadrature(n)


@dataclass
class TorusLine(Hypersurface):
    """Closed geodesic ``b + s (p, q)/|(p, q)|`` on the torus, ``p, q`` coprime.

    The normal is the tangent rotated by +90 degrees, flipped so that its
    ``x2`` component is positive (``+d/dx1`` for vertical circles).
    """

    direction: tuple[int, int] = (1, 0)
    base: tuple[float, float] = (0.0, 0.0)
    collar: float | None = None
    host: ModelManifold = field(default=TORUS, init=False)

    def __post_init__(self):
        p, q = (int(v) for v in self.direction)
        if (p, q) == (0, 0) or math.gcd(p, q) != 1:
            raise ValueError("torus line direction must be a primitive lattice vector")
        self.direction = (p, q)
        self.base = tuple(float(v) for v in self.base)
        self._L = math.hypot(p, q)
        self.d = np.array([p, q], dtype=float) / self._L
        n = np.array([-q, p], dtype=float) / self._L
        if n[1] < 0 or (n[1] == 0 and n[0] < 0):
            n = -n
        self.n = n
        self.spacing = 1.0 / self._L
        if self.collar is None:
            self.collar = min(0.25, 0.45 * self.spacing)
        if not 0 < self.collar < 0.5 * self.spacing:
            raise ValueError("collar half-width exceeds half the spacing of parallel copies")

    @classmethod
    def circle(cls, axis: int, level: float, collar: float | None = None) -> "TorusLine":
        """``{x_axis = level}``; axis=2 is horizontal (parametrized by x1)."""
        if axis == 2:
            return cls((1, 0), (0.0, level), collar)
        if axis == 1:
            return cls((0, 1), (level, 0.0), collar)
        raise ValueError("axis must be 1 or 2")

    @property
    def length(self) -> float:
        return self._L

    @property
    def axis(self) -> int | None:
        if self.direction == (1, 0):
            return 2
        if self.direction == (0, 1):
            return 1
        return None

    @property
    def level(self) -> float:
        return self.base[1] if self.axis == 2 else self.base[0]

    def native_point_normal(self, s):
        s = np.asarray(s, dtype=float)
        pts = wrap_torus(np.asarray(self.base) + s[..., None] * self.d)
        return pts, np.broadcast_to(self.n, pts.shape).copy()

    def fermi_map(self, xp, xn):
        xp = np.asarray(xp, dtype=float)
        xn = np.asarray(xn, dtype=float)
        return wrap_torus(np.asarray(self.base) + xp[..., None] * self.d + xn[..., None] * self.n)

    def normal_coordinate(self, x):
        """Signed distance to the nearest copy of the line (no collar check)."""
        r = np.asarray(x, dtype=float) - np.asarray(self.base)
        return _centered_mod(r @ self.n, self.spacing)

    def fermi_coords(self, x, check: bool = True):
        x = np.asarray(x, dtype=float)
        xn = self.normal_coordinate(x)
        if check and np.any(np.abs(xn) >= self.collar):
            raise OutOfCollarError(f"point outside collar |x_n| < {self.collar}")
        w = x - np.asarray(self.base) - xn[..., None] * self.n
        s0 = w @ self.d
        nc = int(round(self._L**2))
        cand = s0[..., None] + np.arange(nc) / self._L
        resid = w[..., None, :] - cand[..., None] * self.d
        off = np.abs(resid - np.round(resid)).max(-1)
        j = np.argmin(off, axis=-1)
        s = np.take_along_axis(cand, j[..., None], -1)[..., 0]
        return np.mod(s, self._L), xn

    def cotangent_split(self, x, xi, check: bool = True) -> CotangentSplit:
        if check:
            self.fermi_coords(x)
        xi = np.asarray(xi, dtype=float)
        xt = xi @ self.d
        return CotangentSplit(xt, xi @ self.n, np.abs(xt))

    def tangential_form(self, xp, xn, xi_t):
        """``R(x', x_n, xi')``; x_n-independent on the flat torus."""
        return np.asarray(xi_t, dtype=float) ** 2 + 0.0 * np.asarray(xn) + 0.0 * np.asarray(xp)

    def crossing_times(self, x, xi, t_lo: float, t_hi: float):
        """Times ``tau`` in ``[t_lo, t_hi]`` with ``G^tau(x, xi)`` on the line.

        Returns an array with trailing axis of candidates, NaN-padded.
        """
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        r = (x - np.asarray(self.base)) @ self.n
        vn = xi @ self.n
        k = int(math.ceil((t_hi - t_lo) * self.spacing**-1)) + 2
        with np.errstate(divide="ignore", invalid="ignore"):
            # x_n(tau) = r + tau vn  hits j * spacing
            jlo = np.floor(np.minimum(r + t_lo * vn, r + t_hi * vn) / self.spacing)
            js = jlo[..., None] + np.arange(k + 1)
            tau = (js * self.spacing - r[..., None]) / vn[..., None]
        ok = (tau >= t_lo - 1e-15) & (tau <= t_hi + 1e-15) & (np.abs(vn)[..., None] > 0)
        return np.where(ok, tau, np.nan)

    def descriptor(self) -> dict:
        if self.axis is not None:
            return {"kind": "circle", "axis": self.axis, "level": self.level}
        return {"kind": "line", "direction": list(self.direction), "base": list(self.base)}


def _rotation_from_frame(e1, e3):
    e1 = np.asarray(e1, dtype=float)
    e3 = np.asarray(e3, dtype=float)
    e1 = e1 / np.linalg.norm(e1)
    e3 = e3 - (e3 @ e1) * e1
    e3 = e3 / np.linalg.norm(e3)
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3], axis=1)


@dataclass
class SphereCircle(Hypersurface):
    """Latitude circle ``omega_rot = omega0`` in a rotated frame.

    ``rotation`` maps the reference frame to the ambient one.  With the
    identity rotation this is an ordinary latitude circle parametrized by
    ``x' = theta cos(omega0)``; ``omega0 = 0`` gives great circles.  The
    normal is ``+d/domega_rot``.
    """

    omega0: float = 0.0
    rotation: np.ndarray | None = None
    collar: float | None = None
    label: dict | None = None
    host: ModelManifold = field(default=SPHERE, init=False)

    def __post_init__(self):
        if not abs(self.omega0) < math.pi / 2:
            raise ValueError("latitude must lie strictly between the poles")
        self.rotation = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=float)
        if self.collar is None:
            self.collar = min(math.pi / 4, 0.5 * (math.pi / 2 - abs(self.omega0)))
        if not 0 < self.collar < math.pi / 2 - abs(self.omega0):
            raise ValueError("collar reaches a pole of the rotated frame")

    @classmethod
    def equator(cls) -> "SphereCircle":
        return cls(0.0, None, None, {"kind": "latitude", "omega": 0.0})

    @classmethod
    def latitude(cls, omega: float) -> "SphereCircle":
        return cls(omega, None, None, {"kind": "latitude", "omega": float(omega)})

    @classmethod
    def meridian(cls, theta: float) -> "SphereCircle":
        """Great circle through the poles, starting at ``(theta, 0)`` heading north."""
        e1 = [math.cos(theta), math.sin(theta), 0.0]
        e3 = [math.sin(theta), -math.cos(theta), 0.0]
        return cls(0.0, _rotation_from_frame(e1, e3), None, {"kind": "meridian", "theta": float(theta)})

    @classmethod
    def great_circle(cls, pole) -> "SphereCircle":
        pole = np.asarray(pole, dtype=float)
        pole = pole / np.linalg.norm(pole)
        trial = np.array([0.0, 0.0, 1.0]) if abs(pole[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(trial, pole)
        return cls(0.0, _rotation_from_frame(e1, pole), None, {"kind": "great_circle", "pole": pole.tolist()})

    @property
    def length(self) -> float:
        return 2 * math.pi * math.cos(self.omega0)

    def _to_rot(self, P):
        return np.asarray(P) @ self.rotation

    def _from_rot(self, P):
        return np.asarray(P) @ self.rotation.T

    def native_point_normal(self, s):
        s = np.asarray(s, dtype=float)
        th = s / math.cos(self.omega0)
        xr = np.stack([th, np.full_like(th, self.omega0)], -1)
        _, e_om = sphere_frame(xr)
        return self._from_rot(sphere_embed(xr)), self._from_rot(e_om)

    def fermi_map(self, xp, xn):
        xp = np.asarray(xp, dtype=float)
        xn = np.asarray(xn, dtype=float)
        xr = np.stack([xp / math.cos(self.omega0) + 0 * xn, self.omega0 + xn + 0 * xp], -1)
        return sphere_chart(self._from_rot(sphere_embed(xr)))

    def _rot_chart(self, x):
        return sphere_chart(self._to_rot(sphere_embed(x)))

    def fermi_coords(self, x, check: bool = True):
        xr = self._rot_chart(np.asarray(x, dtype=float))
        xn = xr[..., 1] - self.omega0
        if check and np.any(np.abs(xn) >= self.collar):
            raise OutOfCollarError(f"point outside collar |x_n| < {self.collar}")
        return xr[..., 0] * math.cos(self.omega0), xn

    def normal_coordinate(self, x):
        return self._rot_chart(np.asarray(x, dtype=float))[..., 1] - self.omega0

    def cotangent_split(self, x, xi, check: bool = True) -> CotangentSplit:
        if check:
            self.fermi_coords(x)
        V = covector_to_ambient(x, xi)
        P = sphere_embed(x)
        _, xir = ambient_to_covector(self._to_rot(P), self._to_rot(V))
        xt = xir[..., 0] / math.cos(self.omega0)
        return CotangentSplit(xt, xir[..., 1], np.abs(xt))

    def split_ambient(self, P, V):
        """Fermi coordinates and cotangent split for ambient ``(P, V)`` pairs."""
        xr, xir = ambient_to_covector(self._to_rot(P), self._to_rot(V))
        c0 = math.cos(self.omega0)
        xt = xir[..., 0] / c0
        return xr[..., 0] * c0, xr[..., 1] - self.omega0, CotangentSplit(xt, xir[..., 1], np.abs(xt))

    def tangential_form(self, xp, xn, xi_t):
        c0 = math.cos(self.omega0)
        return np.asarray(xi_t) ** 2 * c0**2 / np.cos(self.omega0 + np.asarray(xn)) ** 2 + 0.0 * np.asarray(xp)

    def crossing_times_ambient(self, P, V, t_lo: float, t_hi: float):
        """Crossing times for ambient position/velocity pairs, NaN-padded."""
        a = self._to_rot(P)[..., 2]
        b = self._to_rot(V)[..., 2]
        rho = np.hypot(a, b)
        phi = np.arctan2(b, a)
        z0 = math.sin(self.omega0)
        with np.errstate(invalid="ignore", divide="ignore"):
            acos = np.arccos(np.clip(z0 / rho, -1.0, 1.0))
        ok_any = rho > abs(z0) + 1e-15
        kmin = math.floor((t_lo - 2 * math.pi) / (2 * math.pi))
        kmax = math.ceil((t_hi + 2 * math.pi) / (2 * math.pi))
        ks = np.arange(kmin, kmax + 1) * 2 * math.pi
        roots = np.concatenate(
            [(phi + acos)[..., None] + ks, (phi - acos)[..., None] + ks], axis=-1
        )
        ok = (roots >= t_lo - 1e-15) & (roots <= t_hi + 1e-15) & ok_any[..., None]
        return np.where(ok, roots, np.nan)

    def crossing_times(self, x, xi, t_lo: float, t_hi: float):
        return self.crossing_times_ambient(sphere_embed(x), covector_to_ambient(x, xi), t_lo, t_hi)

    def descriptor(self) -> dict:
        return dict(self.label) if self.label else {"kind": "latitude", "omega": self.omega0}


def fermi_coords(H: Hypersurface, q):
    return H.fermi_coords(q)


def cotangent_split(H: Hypersurface, p: PhasePoint) -> CotangentSplit:
    return H.cotangent_split(p.x, p.xi)


# --------------------------------------------------------------------------
# JSON descriptors


def geometry_from_descriptor(desc: dict) -> tuple[ModelManifold, Hypersurface]:
    """Build ``(manifold, hypersurface)`` from a JSON-style descriptor.

    >>> m, H = geometry_from_descriptor(
    ...     {"manifold": "torus2", "hypersurface": {"kind": "circle", "axis": 2, "level": 0.0}})
    >>> H.length
    1.0
    """
    kind = desc["manifold"]
    hs = desc["hypersurface"]
    collar = hs.get("collar")
    if kind == TORUS2:
        if hs["kind"] == "circle":
            return TORUS, TorusLine.circle(int(hs["axis"]), float(hs.get("level", 0.0)), collar)
        if hs["kind"] == "line":
            return TORUS, TorusLine(tuple(hs["direction"]), tuple(hs.get("base", (0.0, 0.0))), collar)
    elif kind == SPHERE2:
        if hs["kind"] in ("latitude", "equator"):
            H = SphereCircle.latitude(float(hs.get("omega", 0.0)))
        elif hs["kind"] == "meridian":
            H = SphereCircle.meridian(float(hs.get("theta", 0.0)))
        elif hs["kind"] == "great_circle":
            H = SphereCircle.great_circle(hs["pole"])
        else:
            raise ValueError(f"unknown sphere hypersurface kind {hs['kind']!r}")
        if collar is not None:
            H.collar = float(collar)
        return SPHERE, H
    raise ValueError(f"unsupported geometry descriptor {desc!r}")
