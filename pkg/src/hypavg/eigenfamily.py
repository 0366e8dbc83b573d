"""Explicit L^2-normalized Laplace eigenfunction sequences.

Torus families are finite Fourier sums ``sum_k c_k exp(2 pi i k.x)`` over a
single lattice shell ``|k| = 1/(2 pi h)``, so ``-h^2 Lap phi = phi`` exactly.
Sphere families are the zonal harmonic ``Y_l^0`` and the highest-weight
harmonic ``c_l (x - i y)^l`` (a Gaussian beam on the equator), both with
``h = 1/sqrt(l (l + 1))``.

Values and gradients are computed in native coordinates: torus chart points
``(..., 2)`` and sphere ambient unit vectors ``(..., 3)``; sphere gradients
are ambient tangent vectors.  :func:`evaluate` and :func:`evaluate_gradient`
take chart points for both models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import cutoffs
from .errors import InadmissibleError
from .manifold import SPHERE, TORUS, ModelManifold, sphere_embed, sphere_frame

_H_RTOL = 1e-9


def _match_h(h: float, target: float) -> bool:
    return abs(h - target) <= _H_RTOL * target


def lattice_shell(n: int) -> np.ndarray:
    """All integer vectors ``k`` with ``|k|^2 = n``, sorted lexicographically."""
    pts = []
    r = math.isqrt(n)
    for a in range(-r, r + 1):
        b2 = n - a * a
        b = math.isqrt(b2)
        if b * b == b2:
            pts.append((a, b))
            if b:
                pts.append((a, -b))
    return np.array(sorted(pts), dtype=np.int64).reshape(-1, 2)


def is_sum_of_two_squares(n: int) -> bool:
    return n > 0 and lattice_shell(n).shape[0] > 0


class EigenFamily:
    """Base class: a ladder of levels, each giving one eigenfunction."""

    manifold: ModelManifold
    kind: str

    def level(self, index: int):
        """Quantization level (lattice scale, shell or degree) at ladder index."""
        raise NotImplementedError

    def h_at_level(self, level) -> float:
        raise NotImplementedError

    def level_of(self, h: float):
        raise NotImplementedError

    def ladder(self, count: int) -> list:
        if count < 1:
            raise ValueError("count must be >= 1")
        return [self.level(i) for i in range(count)]

    def admissible_h(self, count: int) -> list[float]:
        return [self.h_at_level(lv) for lv in self.ladder(count)]

    def values(self, h: float, X):
        raise NotImplementedError

    def gradient(self, h: float, X):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    @property
    def is_torus(self) -> bool:
        return self.manifold.is_torus


# --------------------------------------------------------------------------
# torus


class TorusFamily(EigenFamily):
    manifold = TORUS

    def fourier(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Integer modes ``(K, 2)`` and unit-norm complex coefficients ``(K,)``."""
        raise NotImplementedError

    def values(self, h, X):
        k, c = self.fourier(h)
        X = np.asarray(X, dtype=float)
        ph = np.exp(2j * np.pi * (X @ k.T.astype(float)))
        return ph @ c

    def gradient(self, h, X):
        k, c = self.fourier(h)
        X = np.asarray(X, dtype=float)
        ph = np.exp(2j * np.pi * (X @ k.T.astype(float))) * c
        return 2j * np.pi * (ph @ k.astype(float))


@dataclass
class TorusPlaneWave(TorusFamily):
    """``exp(2 pi i m <d, x>)`` for a primitive direction ``d``, m = m_min, ..."""

    direction: tuple[int, int] = (1, 0)
    m_min: int = 1
    kind: str = field(default="torus_plane_wave", init=False)

    def __post_init__(self):
        p, q = (int(v) for v in self.direction)
        if math.gcd(p, q) != 1:
            raise ValueError("plane-wave direction must be a primitive lattice vector")
        self.direction = (p, q)
        self._norm = math.hypot(p, q)

    def level(self, index):
        return self.m_min + index

    def h_at_level(self, m):
        return 1.0 / (2 * math.pi * m * self._norm)

    def level_of(self, h):
        m = round(1.0 / (2 * math.pi * h * self._norm))
        if m < self.m_min or not _match_h(h, self.h_at_level(m)):
            raise InadmissibleError(f"h={h!r} is not admissible for {self.kind}")
        return m

    def fourier(self, h):
        m = self.level_of(h)
        return np.array([[m * self.direction[0], m * self.direction[1]]]), np.array([1.0 + 0j])

    def descriptor(self):
        return {"family": self.kind, "direction": list(self.direction), "m_min": self.m_min}


@dataclass
class TorusSuperposition(TorusFamily):
    """Fixed coefficient vector over a lattice shell, laddered in one of two ways.

    ``scaling="dilate"``: modes ``m k``; all ``|k|`` must agree.
    ``scaling="shift"``: modes ``m d + k`` for a primitive ``direction`` d;
    ``<d, k>`` and ``|k|`` must agree across the modes so that every level
    is a single shell.  The limiting direction is then ``d/|d|``.
    """

    modes: list = field(default_factory=lambda: [(1, 0), (-1, 0)])
    amplitudes: list = field(default_factory=lambda: [1.0, 1.0])
    scaling: str = "dilate"
    direction: tuple[int, int] | None = None
    m_min: int = 1
    kind: str = field(default="torus_superposition", init=False)

    def __post_init__(self):
        self._k = np.array(self.modes, dtype=np.int64).reshape(-1, 2)
        amps = np.array([complex(*a) if isinstance(a, (list, tuple)) else complex(a)
                         for a in self.amplitudes])
        if amps.shape[0] != self._k.shape[0]:
            raise ValueError("one amplitude per mode is required")
        if len({tuple(r) for r in self._k.tolist()}) != len(self._k):
            raise ValueError("modes must be distinct")
        self._c = amps / np.linalg.norm(amps)
        n2 = np.sum(self._k**2, axis=1)
        if self.scaling == "dilate":
            if np.any(n2 != n2[0]) or n2[0] == 0:
                raise ValueError("dilated superposition modes must share a nonzero radius")
            self._r0 = math.sqrt(n2[0])
        elif self.scaling == "shift":
            if self.direction is None:
                raise ValueError("shift scaling needs a direction")
            d = np.array(self.direction, dtype=np.int64)
            dk = self._k @ d
            if np.any(dk != dk[0]) or np.any(n2 != n2[0]):
                raise ValueError("shifted modes must share <d,k> and |k|")
            self._d = d
        else:
            raise ValueError(f"unknown scaling {self.scaling!r}")

    def level(self, index):
        return self.m_min + index

    def _modes_at(self, m):
        if self.scaling == "dilate":
            return m * self._k
        return m * self._d + self._k

    def h_at_level(self, m):
        k0 = self._modes_at(m)[0]
        return 1.0 / (2 * math.pi * math.hypot(*k0))

    def level_of(self, h):
        if self.scaling == "dilate":
            guess = round(1.0 / (2 * math.pi * h * self._r0))
        else:
            guess = round(1.0 / (2 * math.pi * h * math.hypot(*self._d)))
        for m in range(max(self.m_min, guess - 3), guess + 4):
            if _match_h(h, self.h_at_level(m)):
                return m
        raise InadmissibleError(f"h={h!r} is not admissible for {self.kind}")

    def fourier(self, h):
        return self._modes_at(self.level_of(h)), self._c.copy()

    @property
    def coefficients(self):
        return self._c.copy()

    def descriptor(self):
        d = {"family": self.kind, "modes": self._k.tolist(),
             "amplitudes": [[float(c.real), float(c.imag)] for c in self._c],
             "scaling": self.scaling, "m_min": self.m_min}
        if self.direction is not None:
            d["direction"] = list(self.direction)
        return d


@dataclass
class TorusRandomShell(TorusFamily):
    """QE surrogate: i.i.d. complex Gaussian coefficients on every full shell.

    Levels are the integers ``n >= shell`` that are sums of two squares;
    ``h = 1/(2 pi sqrt(n))``.  Coefficients depend only on ``(seed, n)``.
    """

    seed: int = 0
    shell: int = 1
    kind: str = field(default="torus_shell", init=False)

    def __post_init__(self):
        self._levels: list[int] = []
        self._next = max(1, int(self.shell))

    def level(self, index):
        while len(self._levels) <= index:
            n = self._next
            self._next += 1
            if is_sum_of_two_squares(n):
                self._levels.append(n)
        return self._levels[index]

    def h_at_level(self, n):
        return 1.0 / (2 * math.pi * math.sqrt(n))

    def level_of(self, h):
        n = round(1.0 / (2 * math.pi * h) ** 2)
        if n < self.shell or not is_sum_of_two_squares(n) or not _match_h(h, self.h_at_level(n)):
            raise InadmissibleError(f"h={h!r} is not admissible for {self.kind}")
        return n

    def coefficients_at(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        k = lattice_shell(n)
        rng = np.random.default_rng([int(self.seed), int(n)])
        c = rng.standard_normal(len(k)) + 1j * rng.standard_normal(len(k))
        return k, c / np.linalg.norm(c)

    def fourier(self, h):
        return self.coefficients_at(self.level_of(h))

    def descriptor(self):
        return {"family": self.kind, "seed": self.seed, "shell": self.shell}


# --------------------------------------------------------------------------
# sphere


def legendre_normalized(l: int, z):
    """``sqrt((2j+1)/(4 pi)) P_j(z)`` for ``j = l`` and ``j = l - 1``.

    Upward three-term recurrence carried in normalized form.
    """
    z = np.asarray(z, dtype=float)
    p_prev = np.full_like(z, math.sqrt(1 / (4 * math.pi)))
    if l == 0:
        return p_prev, np.zeros_like(z)
    p = math.sqrt(3 / (4 * math.pi)) * z
    for j in range(2, l + 1):
        a = math.sqrt((2 * j + 1) / (2 * j - 1)) * (2 * j - 1) / j
        b = math.sqrt((2 * j + 1) / (2 * j - 3)) * (j - 1) / j
        p_prev, p = p, a * z * p - b * p_prev
    return p, p_prev


class SphereFamily(EigenFamily):
    manifold = SPHERE
    l_min: int
    l_step: int

    def level(self, index):
        return self.l_min + self.l_step * index

    def h_at_level(self, l):
        return 1.0 / math.sqrt(l * (l + 1))

    def level_of(self, h):
        l = round(0.5 * (math.sqrt(1 + 4 / h**2) - 1))
        if l < self.l_min or (l - self.l_min) % self.l_step or not _match_h(h, self.h_at_level(l)):
            raise InadmissibleError(f"h={h!r} is not admissible for {self.kind}")
        return l


@dataclass
class SphereZonal(SphereFamily):
    """Zonal harmonic ``Y_l^0 = sqrt((2l+1)/4pi) P_l(sin omega)``."""

    l_min: int = 1
    l_step: int = 1
    kind: str = field(default="sphere_zonal", init=False)

    def values(self, h, X):
        l = self.level_of(h)
        p, _ = legendre_normalized(l, np.asarray(X)[..., 2])
        return p.astype(complex)

    def gradient(self, h, X):
        l = self.level_of(h)
        X = np.asarray(X, dtype=float)
        z = X[..., 2]
        p, pm = legendre_normalized(l, z)
        s2 = 1.0 - z**2
        ok = s2 > 1e-14
        with np.errstate(divide="ignore", invalid="ignore"):
            dz = np.where(ok, l * (math.sqrt((2 * l + 1) / (2 * l - 1)) * pm - z * p) / s2, 0.0)
        ez = np.zeros_like(X)
        ez[..., 2] = 1.0
        tang = ez - z[..., None] * X
        return (dz[..., None] * tang).astype(complex)

    def descriptor(self):
        return {"family": self.kind, "l_min": self.l_min, "l_step": self.l_step}


def beam_log_constant(l: int) -> float:
    """Log of the L^2 normalizer of ``(x - i y)^l`` on the unit sphere.

    ``c_l = sqrt((2l + 1)! / (4 pi)) / (2^l l!)``, evaluated with log-Gamma.
    """
    return 0.5 * (gammaln(2 * l + 2) - math.log(4 * math.pi)) - l * math.log(2) - gammaln(l + 1)


@dataclass
class SphereGaussianBeam(SphereFamily):
    """Highest-weight harmonic ``c_l exp(-i l theta) cos(omega)^l``.

    With ``surrogate=True`` the profile ``cos(omega)^l`` is replaced by
    ``chi(omega) exp(-l omega^2 / 2)`` where ``chi`` is the smooth bump equal
    to 1 on [-1/2, 1/2] and supported in (-1, 1); that function is not an
    exact eigenfunction.
    """

    l_min: int = 1
    l_step: int = 1
    surrogate: bool = False
    kind: str = field(default="sphere_beam", init=False)

    def values(self, h, X):
        l = self.level_of(h)
        X = np.asarray(X, dtype=float)
        logc = beam_log_constant(l)
        th = np.arctan2(X[..., 1], X[..., 0])
        phase = np.exp(-1j * l * th)
        if self.surrogate:
            om = np.arcsin(np.clip(X[..., 2], -1, 1))
            return np.exp(logc - 0.5 * l * om**2) * cutoffs.bump(om) * phase
        r = np.hypot(X[..., 0], X[..., 1])
        with np.errstate(divide="ignore"):
            amp = np.exp(logc + l * np.log(r))
        return amp * phase

    def gradient(self, h, X):
        l = self.level_of(h)
        X = np.asarray(X, dtype=float)
        if self.surrogate:
            x = np.stack([np.arctan2(X[..., 1], X[..., 0]), np.arcsin(np.clip(X[..., 2], -1, 1))], -1)
            e_th, e_om = sphere_frame(x)
            om = x[..., 1]
            u = self.values(h, X)
            d_th = -1j * l * u
            base = np.exp(beam_log_constant(l) - 0.5 * l * om**2) * np.exp(-1j * l * x[..., 0])
            d_om = base * (cutoffs.bump(om, 1) - l * om * cutoffs.bump(om))
            co2 = np.cos(om) ** 2
            return (d_th / co2)[..., None] * e_th + d_om[..., None] * e_om
        w = X[..., 0] - 1j * X[..., 1]
        r = np.abs(w)
        with np.errstate(divide="ignore", invalid="ignore"):
            amp = np.where(r > 0, np.exp(beam_log_constant(l) + (l - 1) * np.log(r)), 0.0)
            ph = np.where(r > 0, (w / r) ** (l - 1), 0.0)
        g = (l * amp * ph)[..., None] * np.array([1.0, -1j, 0.0])
        return g - np.sum(g * X, -1)[..., None] * X

    def descriptor(self):
        return {"family": self.kind, "l_min": self.l_min, "l_step": self.l_step,
                "surrogate": self.surrogate}


# --------------------------------------------------------------------------
# public operations


def admissible_h(family: EigenFamily, count: int) -> list[float]:
    """First ``count`` admissible ``h`` values, strictly decreasing."""
    return family.admissible_h(count)


def _native(family, point):
    point = np.asarray(point, dtype=float)
    return point if family.is_torus else sphere_embed(point)


def evaluate(family: EigenFamily, h: float, point):
    """``phi_h`` at chart point(s)."""
    return family.values(h, _native(family, point))


def evaluate_gradient(family: EigenFamily, h: float, point):
    """Chart covector ``(d/dx1, d/dx2)`` or ``(d/dtheta, d/domega)`` of ``phi_h``."""
    point = np.asarray(point, dtype=float)
    g = family.gradient(h, _native(family, point))
    if family.is_torus:
        return g
    e_th, e_om = sphere_frame(point)
    return np.stack([np.sum(g * e_th, -1), np.sum(g * e_om, -1)], -1)


@dataclass
class SampledFunction:
    """Values on a structured grid together with matching quadrature weights.

    ``grid`` is ``"torus"`` (uniform ``N x N``, ``coords = (x1, x2)``) or
    ``"sphere"`` (Gauss-Legendre in ``z = sin omega`` times uniform theta,
    ``coords = (theta, z)``).
    """

    values: np.ndarray
    grid: str
    coords: tuple
    weights: np.ndarray

    @property
    def resolution(self):
        return self.values.shape

    def integral(self):
        return np.sum(self.weights * self.values)


def torus_grid(n: int):
    x = np.arange(n) / n
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return X1, X2


def sample(family: EigenFamily, h: float, resolution: int, n_z: int | None = None) -> SampledFunction:
    """Evaluate ``phi_h`` on the family's structured grid."""
    if family.is_torus:
        X1, X2 = torus_grid(resolution)
        vals = family.values(h, np.stack([X1, X2], -1))
        return SampledFunction(vals, "torus", (X1, X2), np.full(vals.shape, 1.0 / resolution**2))
    nz = n_z or resolution
    z, wz = np.polynomial.legendre.leggauss(nz)
    th = 2 * np.pi * np.arange(resolution) / resolution
    TH, Z = np.meshgrid(th, z, indexing="ij")
    co = np.sqrt(1 - Z**2)
    X = np.stack([np.cos(TH) * co, np.sin(TH) * co, Z], -1)
    W = np.broadcast_to(wz * (2 * np.pi / resolution), TH.shape)
    return SampledFunction(family.values(h, X), "sphere", (TH, Z), W)


def l2_norm(family: EigenFamily, h: float, resolution: int = 64) -> float:
    """Quadrature estimate of ``||phi_h||_{L^2(M)}``.

    Torus and exact sphere families use rules that are exact for
    ``|phi_h|^2``; the beam surrogate uses composite Gauss-Legendre in
    ``omega`` split at the cutoff's breakpoints.
    """
    if resolution < 64:
        raise ValueError("resolution must be >= 64")
    if family.is_torus:
        k, _ = family.fourier(h)
        spread = int(np.max(k.max(0) - k.min(0)))
        sf = sample(family, h, max(resolution, 2 * spread + 2))
        return float(math.sqrt(np.sum(sf.weights * np.abs(sf.values) ** 2)))
    l = family.level_of(h)
    if isinstance(family, SphereGaussianBeam) and family.surrogate:
        n = max(resolution, int(8 * math.sqrt(l)) + 64)
        x, w = np.polynomial.legendre.leggauss(n)
        total = 0.0
        for a, b in [(-1.0, -0.5), (-0.5, 0.5), (0.5, 1.0)]:
            om = 0.5 * (b - a) * x + 0.5 * (a + b)
            X = np.stack([np.cos(om), 0 * om, np.sin(om)], -1)
            f = np.abs(family.values(h, X)) ** 2 * np.cos(om)
            total += 0.5 * (b - a) * np.sum(w * f)
        return float(math.sqrt(2 * math.pi * total))
    # |phi|^2 is theta-independent and a degree-2l polynomial in z
    sf = sample(family, h, 8, n_z=max(resolution, l + 2))
    return float(math.sqrt(np.sum(sf.weights * np.abs(sf.values) ** 2)))


def family_from_descriptor(desc: dict) -> EigenFamily:
    kind = desc["family"]
    if kind == "torus_plane_wave":
        return TorusPlaneWave(tuple(desc.get("direction", (1, 0))), int(desc.get("m_min", 1)))
    if kind == "torus_superposition":
        d = desc.get("direction")
        return TorusSuperposition(desc["modes"], desc["amplitudes"], desc.get("scaling", "dilate"),
                                  tuple(d) if d is not None else None, int(desc.get("m_min", 1)))
    if kind == "torus_shell":
        return TorusRandomShell(int(desc.get("seed", 0)), int(desc.get("shell", 1)))
    if kind == "sphere_zonal":
        return SphereZonal(int(desc.get("l_min", 1)), int(desc.get("l_step", 1)))
    if kind == "sphere_beam":
        return SphereGaussianBeam(int(desc.get("l_min", 1)), int(desc.get("l_step", 1)),
                                  bool(desc.get("surrogate", False)))
    raise ValueError(f"unknown family {kind!r}")
