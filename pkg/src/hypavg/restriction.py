"""Hypersurface averages of eigenfunctions and their decay in ``h``.

Closed curves use the periodic trapezoid rule, which is spectrally accurate
for the smooth periodic integrands here; every integral is recomputed with
twice the nodes and a disagreement above ``1e-8`` (relative to the
integrand's L^1 norm) raises :class:`~hypavg.errors.ResolutionError`.  Arcs
use composite Gauss-Legendre rules with exact endpoints.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .cutoffs import plateau, ramp
from .eigenfamily import EigenFamily, SphereFamily, TorusFamily
from .errors import FitError, ResolutionError
from .manifold import Hypersurface
from .quantize import beta_multiplier, curve_microlocalizer, microlocalize_defect

SELF_CHECK_TOL = 1e-8
FIT_FLOOR = 1e-13
CSV_COLUMNS = ("h", "re_avg", "im_avg", "re_normal_avg", "im_normal_avg", "l2_restriction", "l2_normal",
               "beta_delta", "microlocalized_norm")


def restricted_frequency(family: EigenFamily, h: float, H: Hypersurface) -> int:
    """Largest Fourier mode of ``phi_h`` along ``H`` (per period of ``H``)."""
    if isinstance(family, TorusFamily):
        k, _ = family.fourier(h)
        return int(np.max(np.abs(np.asarray(k) @ np.asarray(H.direction))))
    if isinstance(family, SphereFamily):
        return int(family.level_of(h))
    raise TypeError(f"unsupported family {type(family).__name__}")


def _min_nodes(family, h, H, n=None):
    return max(64, 4 * restricted_frequency(family, h, H) + 16, n or 0)


def _self_checked(compute: Callable[[int], tuple[complex, float]], n: int) -> complex:
    """Evaluate with ``n`` and ``2n`` nodes and compare."""
    a, _ = compute(n)
    b, scale = compute(2 * n)
    if abs(a - b) > SELF_CHECK_TOL * max(1.0, scale):
        raise ResolutionError(f"quadrature with {n} and {2 * n} nodes disagrees by {abs(a - b):.3e}")
    return b


def _restriction_samples(family, h, H, n, derivative=False):
    q = H.quadrature(n)
    if derivative:
        g = family.gradient(h, q.points)
        vals = h * np.sum(g * q.normals, -1)
    else:
        vals = family.values(h, q.points)
    return q, vals


def boundary_average(family: EigenFamily, h: float, H: Hypersurface, weight: Callable | None = None,
                     n: int | None = None) -> complex:
    """``int_H w phi_h dsigma_H`` with ``w = weight(x')`` (default 1)."""

    def compute(m):
        q, v = _restriction_samples(family, h, H, m)
        if weight is not None:
            v = v * weight(q.params)
        return complex(np.sum(q.weights * v)), float(np.sum(q.weights * np.abs(v)))

    return _self_checked(compute, _min_nodes(family, h, H, n))


def normal_average(family: EigenFamily, h: float, H: Hypersurface, weight: Callable | None = None,
                   n: int | None = None) -> complex:
    """``int_H w h d_nu phi_h dsigma_H`` with the normal of ``H``."""

    def compute(m):
        q, v = _restriction_samples(family, h, H, m, derivative=True)
        if weight is not None:
            v = v * weight(q.params)
        return complex(np.sum(q.weights * v)), float(np.sum(q.weights * np.abs(v)))

    return _self_checked(compute, _min_nodes(family, h, H, n))


def restriction_norm(family: EigenFamily, h: float, H: Hypersurface, delta: float | None = None,
                     normal: bool = False, n: int | None = None) -> float:
    """``||phi_h||_{L^2(H)}`` or ``||h D_nu phi_h||_{L^2(H)}``, optionally after ``Op_h(beta_delta)``."""

    def compute(m):
        q, v = _restriction_samples(family, h, H, m, derivative=normal)
        if delta is not None:
            v = curve_microlocalizer(delta, h, v, H.length)
        val = float(np.sum(q.weights * np.abs(v) ** 2))
        return val, val

    return math.sqrt(max(_self_checked(compute, _min_nodes(family, h, H, n)).real, 0.0))


def microlocalized_average(family: EigenFamily, h: float, H: Hypersurface, delta: float,
                           n: int | None = None) -> complex:
    """``int_H Op_h(beta_delta) phi_h dsigma_H``."""

    def compute(m):
        q, v = _restriction_samples(family, h, H, m)
        v = curve_microlocalizer(delta, h, v, H.length)
        return complex(np.sum(q.weights * v)), float(np.sum(q.weights * np.abs(v)))

    return _self_checked(compute, _min_nodes(family, h, H, n))


def reduction_defect(family: EigenFamily, h: float, H: Hypersurface, delta: float, weight: Callable | None = None,
                     n: int | None = None) -> float:
    """``|int_H w phi_h - int_H w Op_h(beta_delta) phi_h|`` with ``w = weight(x')`` (default 1)."""
    q = H.quadrature(_min_nodes(family, h, H, n))
    w = None if weight is None else weight(q.params)
    return microlocalize_defect(family.values(h, q.points), h, delta, H.length, weight=w)


# --------------------------------------------------------------------------
# arcs


@dataclass(frozen=True)
class ArcSet:
    """Finite union of disjoint parameter intervals on a closed curve of ``length``."""

    intervals: tuple
    length: float = 1.0

    def __post_init__(self):
        iv = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in iv:
            if not b >= a:
                raise ValueError("interval endpoints must be ordered")
        for (a0, b0), (a1, b1) in zip(iv[:-1], iv[1:]):
            if a1 < b0:
                raise ValueError("intervals must be disjoint")
        if iv and iv[-1][1] - iv[0][0] > self.length + 1e-15:
            raise ValueError("intervals exceed one period")
        object.__setattr__(self, "intervals", tuple(iv))

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    @property
    def is_full(self) -> bool:
        return abs(self.measure - self.length) < 1e-15

    def boundary(self) -> list[float]:
        """Endpoints of ``A`` on the circle; touching endpoints cancel."""
        if self.is_full:
            return []
        pts = []
        for a, b in self.intervals:
            if b > a:
                pts += [a % self.length, b % self.length]
        out = []
        for p in pts:
            if pts.count(p) == 1:
                out.append(p)
        return sorted(set(out))

    def indicator(self, s):
        s = np.mod(np.asarray(s, dtype=float), self.length)
        out = np.zeros(s.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (np.mod(s - a, self.length) <= b - a) & (b > a)
        return out

    def fourier(self, m):
        """``(1/L) int_A exp(-2 pi i m s / L) ds``."""
        m = np.asarray(m, dtype=float)
        L = self.length
        out = np.zeros(m.shape, complex)
        for a, b in self.intervals:
            nz = m != 0
            out[~nz] += (b - a) / L
            w = 2j * np.pi * m[nz] / L
            out[nz] += (np.exp(-w * a) - np.exp(-w * b)) / (w * L)
        return out


@dataclass
class SmoothIndicator:
    """Smooth ``chi_h`` equal to 1 within ``w = h^(1-eps)`` of ``boundary(A)``, 0 beyond ``2w``."""

    arcs: ArcSet
    width: float
    derivative_constants: tuple  # sup |chi^(k)| * w^k, k = 1, 2, 3

    def __call__(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        L = self.arcs.length
        out = np.zeros(s.shape)
        for p in self.arcs.boundary():
            d = np.mod(s - p + 0.5 * L, L) - 0.5 * L
            out = out + plateau(d, 2 * self.width, order)
        return out


def smooth_indicator(A: ArcSet, h: float, eps: float) -> SmoothIndicator:
    """Cutoff to the ``h^(1-eps)`` neighbourhood of the endpoints of ``A``.

    Properties: ``chi_h = 1`` where ``dist(s, boundary A) <= h^(1-eps)``,
    ``chi_h = 0`` where it is ``>= 2 h^(1-eps)``, and
    ``|d^k chi_h| <= C_k h^(-k(1-eps))`` with ``C_k`` recorded.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    w = h ** (1 - eps)
    pts = A.boundary()
    L = A.length
    for p, q in zip(pts, pts[1:] + ([pts[0] + L] if pts else [])):
        if len(pts) > 1 and q - p < 4 * w:
            raise ValueError("mollification bands overlap")
    # chi = plateau(d, 2w) has chi^(k) = ramp^(k)(.) / w^k
    s = np.linspace(1e-6, 1 - 1e-6, 20001)
    consts = tuple(float(np.max(np.abs(ramp(s, k)))) for k in (1, 2, 3))
    return SmoothIndicator(A, w, consts)


def rough_projection_norm(A: ArcSet, delta: float, h: float) -> float:
    """``||(1 - Op_h(beta_delta)) 1_A||_{L^2(H)}`` from the exact Fourier coefficients of ``1_A``.

    By Parseval the norm squared is ``|A| - L sum_m |c_m|^2 chi (2 - chi)``
    with ``chi = beta(2 pi h m / L)``, a finite sum over ``|m| <= delta L / (2 pi h)``.
    """
    L = A.length
    M = int(math.floor(delta * L / (2 * math.pi * h))) + 1
    m = np.arange(-M, M + 1)
    chi = beta_multiplier(delta, h, m, L)
    c2 = np.abs(A.fourier(m)) ** 2
    val = A.measure - L * np.sum(c2 * chi * (2 - chi))
    return math.sqrt(max(val, 0.0))


def _gl_panels(a, b, per_panel, n_panels):
    x, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(a, b, n_panels + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    return (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel(), (0.5 * (hi - lo) * w).ravel()


def local_average(family: EigenFamily, h: float, H: Hypersurface, A: ArcSet, weight: Callable | None = None,
                  n: int | None = None) -> complex:
    """``int_A w phi_h dsigma_H`` by composite Gauss-Legendre per interval."""
    if abs(A.length - H.length) > 1e-12:
        raise ValueError("arc set length must match the hypersurface")
    freq = restricted_frequency(family, h, H)

    def compute(m):
        total, scale = 0j, 0.0
        for a, b in A.intervals:
            if b <= a:
                continue
            panels = max(1, int(math.ceil(m * (b - a) / H.length)))
            s, w = _gl_panels(a, b, 20, panels)
            pts, _ = H.native_point_normal(s)
            v = family.values(h, pts)
            if weight is not None:
                v = v * weight(s)
            total += np.sum(w * v)
            scale += float(np.sum(w * np.abs(v)))
        return total, scale

    return _self_checked(compute, max(8, 2 * freq + 8, n or 0))


# --------------------------------------------------------------------------
# records and fits


@dataclass
class DecayRecord:
    h: float
    re_avg: float
    im_avg: float
    re_normal_avg: float
    im_normal_avg: float
    l2_restriction: float
    l2_normal: float
    beta_delta: float = float("nan")
    microlocalized_norm: float = float("nan")

    @property
    def abs_avg(self) -> float:
        return math.hypot(self.re_avg, self.im_avg)

    @property
    def abs_normal_avg(self) -> float:
        return math.hypot(self.re_normal_avg, self.im_normal_avg)

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in CSV_COLUMNS}

    def value(self, column: str) -> float:
        if column in ("avg", "abs_avg"):
            return self.abs_avg
        if column in ("normal_avg", "abs_normal_avg"):
            return self.abs_normal_avg
        return float(getattr(self, column))


def decay_record(family: EigenFamily, h: float, H: Hypersurface, delta: float | None = None) -> DecayRecord:
    avg = boundary_average(family, h, H)
    navg = normal_average(family, h, H)
    rec = DecayRecord(h, avg.real, avg.imag, navg.real, navg.imag, restriction_norm(family, h, H),
                      restriction_norm(family, h, H, normal=True))
    if delta is not None:
        rec.beta_delta = delta
        rec.microlocalized_norm = restriction_norm(family, h, H, delta=delta)
    return rec


@dataclass
class FitResult:
    """Least-squares fit ``log value = exponent * log h + intercept``."""

    exponent: float
    intercept: float
    residual: float
    band: float  # half-width of the 95% confidence interval of the exponent
    n_used: int
    n_filtered: int
    exact: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def decay_fit(hs, values=None, column: str | None = None, drop_fraction: float = 0.2,
              floor: float = FIT_FLOOR, min_points: int = 5) -> FitResult:
    """Fit the power of ``h`` in ``values``.

    ``hs`` is either a list of :class:`DecayRecord` (with ``column``) or an
    array of ``h`` together with ``values``.  The largest ``drop_fraction``
    of the ``h`` values is dropped as pre-asymptotic.  Values at or below
    ``floor`` are treated as vanishing and filtered; if every value
    vanishes the sequence is identically zero to rounding and the result is
    flagged ``exact`` with an infinite exponent.
    """
    if values is None:
        recs = list(hs)
        hs = np.array([r.h for r in recs], float)
        values = np.array([r.value(column) for r in recs], float)
    hs = np.asarray(hs, float)
    values = np.abs(np.asarray(values, float))
    order = np.argsort(hs)
    hs, values = hs[order], values[order]
    keep = len(hs) - int(math.floor(drop_fraction * len(hs)))
    hs, values = hs[:keep], values[:keep]
    ok = np.isfinite(values) & (values > floor)
    n_filtered = int(np.sum(~ok))
    if not np.any(ok) and len(values) >= min_points:
        return FitResult(math.inf, math.nan, 0.0, 0.0, 0, n_filtered, True)
    if np.sum(ok) < min_points:
        raise FitError(f"only {int(np.sum(ok))} usable points after filtering; need {min_points}")
    x, y = np.log(hs[ok]), np.log(values[ok])
    res = stats.linregress(x, y)
    n = len(x)
    band = float(stats.t.ppf(0.975, n - 2) * res.stderr) if n > 2 else math.inf
    resid = float(np.sqrt(np.mean((y - (res.slope * x + res.intercept)) ** 2)))
    return FitResult(float(res.slope), float(res.intercept), resid, band, n, n_filtered)


def decay_sweep(family: EigenFamily, H: Hypersurface, count: int, delta: float | None = None) -> list[DecayRecord]:
    return [decay_record(family, h, H, delta) for h in family.admissible_h(count)]
