"""Left (Kohn-Nirenberg) quantization on the flat torus.

A symbol is a finite sum of separable terms ``g(x) * psi(xi)``.  The spatial
factor ``g`` is a trigonometric polynomial, optionally multiplied by a cutoff
``chi_alpha`` in the normal coordinate of a torus line.  Acting on a Fourier
mode,

    Op_h(a) e^{2 pi i <k, x>} = a(x, 2 pi h k) e^{2 pi i <k, x>},

so matrix elements against torus eigenfunctions reduce to exact double sums
over Fourier pairs once the Fourier coefficients of ``g`` are known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .cutoffs import lipschitz_constant, plateau, plateau_breakpoints
from .eigenfamily import SampledFunction, TorusFamily, torus_grid
from .errors import ResolutionError
from .manifold import TorusLine

MAX_FOURIER_ORDER = 64
DELTA_GRID = (0.4, 0.2, 0.1, 0.05)
ALPHA_GRID = (0.2, 0.1, 0.05)


@dataclass(frozen=True)
class Slab:
    """``{x : lo <= x_n <= hi}`` for the normal coordinate ``x_n`` of ``line``.

    ``hi - lo`` must not exceed the spacing of parallel copies of the line.
    """

    line: TorusLine
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.hi - self.lo <= self.line.spacing + 1e-15:
            raise ValueError("slab width must be positive and at most the line spacing")

    def contains(self, X):
        r = (np.asarray(X, dtype=float) - np.asarray(self.line.base)) @ self.line.n
        return np.mod(r - self.lo, self.line.spacing) <= self.hi - self.lo


def _panel_integral(nu, a, b, w: Callable | None):
    """``int_a^b w(t) exp(2 pi i nu t) dt`` for an array of frequencies."""
    nu = np.asarray(nu, dtype=float)
    if b <= a:
        return np.zeros(nu.shape, complex)
    if w is None:
        out = np.empty(nu.shape, complex)
        small = np.abs(nu) * (b - a) < 1e-8
        z = nu[~small]
        out[~small] = (np.exp(2j * np.pi * z * b) - np.exp(2j * np.pi * z * a)) / (2j * np.pi * z)
        out[small] = (b - a) * np.exp(1j * np.pi * nu[small] * (a + b))
        return out
    n = 64 + int(4 * np.max(np.abs(nu), initial=0.0) * (b - a))
    x, wt = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (b - a) * x + 0.5 * (a + b)
    f = 0.5 * (b - a) * wt * w(t)
    out = np.empty(nu.shape, complex)
    flat = nu.ravel()
    res = out.ravel()
    for i in range(0, flat.size, 256):
        res[i:i + 256] = np.exp(2j * np.pi * np.outer(flat[i:i + 256], t)) @ f
    return res.reshape(nu.shape)


def _cutoff_integral(nu, lo, hi, centers, width, order):
    """``int_lo^hi sum_c chi_width^(order)(t - c) exp(2 pi i nu t) dt``."""
    total = np.zeros(np.shape(nu), complex)
    for c0 in centers:
        cuts = sorted({lo, hi, *[b for b in plateau_breakpoints(c0, width) if lo < b < hi]})
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b) - c0
            if abs(mid) >= width:
                continue
            if abs(mid) <= 0.5 * width:
                if order == 0:
                    total += _panel_integral(nu, a, b, None)
                continue
            total += _panel_integral(nu, a, b, lambda t, c0=c0: plateau(t - c0, width, order))
    return total


@dataclass(frozen=True)
class XFactor:
    """Spatial factor ``T(x) * chi_width^(cutoff_order)(x_n)``.

    ``T`` is a trigonometric polynomial given by ``trig``, a tuple of
    ``((j1, j2), coefficient)`` pairs.  When ``line`` is given the second
    factor is the ``cutoff_order``-th derivative of the plateau cutoff in
    the periodized normal coordinate of that line; otherwise it is 1.
    """

    trig: tuple = (((0, 0), 1.0),)
    line: TorusLine | None = None
    width: float | None = None
    cutoff_order: int = 0

    def __post_init__(self):
        modes = np.array([m for m, _ in self.trig], dtype=int).reshape(-1, 2)
        if modes.size and np.max(np.abs(modes)) > MAX_FOURIER_ORDER:
            raise ValueError(f"trigonometric order exceeds {MAX_FOURIER_ORDER}")
        if (self.line is None) != (self.width is None):
            raise ValueError("cutoff needs both a line and a width")
        if self.line is not None and not 0 < self.width < 0.5 * self.line.spacing:
            raise ValueError("cutoff width must be below half the spacing of parallel copies")
        if self.line is None and self.cutoff_order:
            raise ValueError("cutoff derivative without a cutoff")

    @property
    def modes(self) -> np.ndarray:
        return np.array([m for m, _ in self.trig], dtype=float).reshape(-1, 2)

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([c for _, c in self.trig], dtype=complex)

    @property
    def order(self) -> int | None:
        """Fourier order in ``x``; ``None`` when a cutoff makes it infinite."""
        if self.line is not None:
            return None
        return int(np.max(np.abs(self.modes))) if len(self.trig) else 0

    def _with(self, weights, extra_order):
        trig = tuple((m, c * w) for (m, c), w in zip(self.trig, weights))
        return replace(self, trig=trig, cutoff_order=self.cutoff_order + extra_order)

    def derivative_terms(self, vec) -> list["XFactor"]:
        """Factors summing to ``vec . grad g``."""
        j = self.modes
        out = [self._with(2j * np.pi * (j @ np.asarray(vec, dtype=float)), 0)]
        if self.line is not None:
            out.append(replace(self, cutoff_order=self.cutoff_order + 1).scaled(float(np.dot(vec, self.line.n))))
        return out

    def laplacian_terms(self) -> list["XFactor"]:
        """Factors summing to ``Delta g``."""
        j = self.modes
        out = [self._with(-4 * np.pi**2 * np.sum(j**2, -1), 0)]
        if self.line is not None:
            out.append(self._with(2 * 2j * np.pi * (j @ self.line.n), 1))
            out.append(replace(self, cutoff_order=self.cutoff_order + 2))
        return out

    def scaled(self, c: complex) -> "XFactor":
        return self._with(np.full(len(self.trig), c), 0)

    def value(self, X, order: int = 0):
        """Value (order 0), gradient (1) or Laplacian (2) at points ``X``."""
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        X = np.asarray(X, dtype=float)
        j, c = self.modes, self.coeffs
        E = np.exp(2j * np.pi * (X @ j.T)) * c
        if order == 0:
            T = E.sum(-1)
        elif order == 1:
            T = 2j * np.pi * (E @ j)
        else:
            T = -4 * np.pi**2 * (E @ np.sum(j**2, -1))
        if self.line is None:
            return T
        if self.cutoff_order + order > 3:
            raise NotImplementedError("cutoff derivatives above order 3")
        t = self.line.normal_coordinate(X)
        r = self.cutoff_order
        w = plateau(t, self.width, r)
        if order == 0:
            return T * w
        T0 = E.sum(-1)
        w1 = plateau(t, self.width, r + 1)
        n = self.line.n
        if order == 1:
            return T * w[..., None] + (T0 * w1)[..., None] * n
        gT = 2j * np.pi * (E @ j)
        return T * w + 2 * w1 * (gT @ n) + T0 * plateau(t, self.width, r + 2)

    def fourier(self, m, slab: Slab | None = None) -> np.ndarray:
        """``int g(x) 1_slab(x) exp(-2 pi i <m, x>) dx`` for integer modes ``m``.

        The torus is parametrized as ``b + s d + t n`` along the reference
        line (the slab's, else the cutoff's).  The ``s`` integral selects
        modes with ``<j - m, (p, q)> = 0``; the ``t`` integral is done
        panelwise, in closed form where the cutoff is constant.
        """
        m = np.asarray(m, dtype=float).reshape(-1, 2)
        ref = slab.line if slab is not None else self.line
        j, c = self.modes, self.coeffs
        if ref is None:
            hit = np.all(j[None, :, :] == m[:, None, :], -1)
            return hit.astype(complex) @ c
        sp = ref.spacing
        lo, hi = (slab.lo, slab.hi) if slab is not None else (-0.5 * sp, 0.5 * sp)
        diff = j[None, :, :] - m[:, None, :]
        mask = np.abs(diff @ np.array(ref.direction, dtype=float)) < 0.5
        nu = np.where(mask, diff @ ref.n, 0.0)
        phase = np.exp(2j * np.pi * (diff @ np.asarray(ref.base)))
        if self.line is None:
            J = _panel_integral(nu, lo, hi, None)
        else:
            if tuple(self.line.direction) != tuple(ref.direction):
                raise ValueError("slab line must be parallel to the cutoff line")
            c0 = float(ref.normal_coordinate(np.asarray(self.line.base)))
            ks = np.arange(math.floor((lo - c0) / sp) - 1, math.ceil((hi - c0) / sp) + 2)
            centers = [c0 + k * sp for k in ks if c0 + k * sp - self.width < hi and c0 + k * sp + self.width > lo]
            J = _cutoff_integral(nu, lo, hi, centers, self.width, self.cutoff_order)
        return np.sum(np.where(mask, ref.length * phase * J, 0.0) * c, -1)

    def breakpoints(self) -> list[float]:
        """Normal-coordinate breakpoints of the cutoff (empty without one)."""
        return [] if self.line is None else plateau_breakpoints(0.0, self.width)


@dataclass(frozen=True)
class XiFactor:
    """Momentum factor ``psi(xi)`` evaluated on arrays of shape ``(..., 2)``."""

    fn: Callable
    label: str = "psi"

    def __call__(self, xi):
        return np.asarray(self.fn(np.asarray(xi, dtype=float)))


def xi_monomial(p1: int, p2: int) -> XiFactor:
    return XiFactor(lambda xi: xi[..., 0] ** p1 * xi[..., 1] ** p2, f"xi1^{p1} xi2^{p2}")


def xi_constant(value: float = 1.0) -> XiFactor:
    return XiFactor(lambda xi: np.full(xi.shape[:-1], value), f"{value}")


def beta(delta: float, xi_t):
    """Tangential microlocalizer ``chi_delta(|xi'|)``."""
    return plateau(np.abs(xi_t), delta)


def conormal_xi(line: TorusLine, delta: float, power: int = 0) -> XiFactor:
    """``beta_delta(xi')^2 * xi_n^power`` for the splitting along ``line``."""
    if power not in (0, 1, 2):
        raise ValueError("normal power must be 0, 1 or 2")
    d, n = line.d, line.n
    return XiFactor(lambda xi: beta(delta, xi @ d) ** 2 * (xi @ n) ** power,
                    f"beta_{delta}^2 xi_n^{power}")


@dataclass(frozen=True)
class Symbol:
    """Finite sum of separable terms ``g(x) * psi(xi)``.

    ``structure`` records the parameters of the conormal symbol
    ``beta_delta^2 chi_alpha(x_n) xi_n^p`` when built by
    :func:`conormal_symbol`.
    """

    terms: tuple
    structure: dict | None = None

    def __call__(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        return sum(g.value(x) * psi(xi) for g, psi in self.terms)

    def __add__(self, other: "Symbol") -> "Symbol":
        return Symbol(self.terms + other.terms)

    def scaled(self, c: complex) -> "Symbol":
        return Symbol(tuple((replace(g, trig=tuple((m, c * v) for m, v in g.trig)), psi)
                            for g, psi in self.terms), self.structure)

    def x_laplacian(self) -> "Symbol":
        """Symbol ``Delta_x a``."""
        return Symbol(tuple((f, psi) for g, psi in self.terms for f in g.laplacian_terms()))

    def bracket_with_energy(self) -> "Symbol":
        """Poisson bracket ``{|xi|^2, a} = 2 xi . grad_x a`` on the flat torus."""
        terms = []
        for g, psi in self.terms:
            for i, e in enumerate(np.eye(2)):
                for f in g.derivative_terms(e):
                    terms.append((f, XiFactor(lambda xi, psi=psi, i=i: 2 * xi[..., i] * psi(xi),
                                              f"2 xi{i + 1} {psi.label}")))
        return Symbol(tuple(terms))

    @property
    def fourier_order(self) -> int:
        """Fourier order in ``x``; cutoff factors count as the truncation order."""
        orders = [g.order for g, _ in self.terms]
        return max(MAX_FOURIER_ORDER if o is None else o for o in orders)

    @property
    def lipschitz_constant(self) -> float | None:
        """``sup |chi_alpha'| * alpha`` for conormal symbols."""
        return lipschitz_constant() if self.structure else None


def trig_symbol(coeffs: dict, psi: XiFactor | None = None) -> Symbol:
    """``(sum_j c_j e^{2 pi i <j, x>}) * psi(xi)``; ``psi`` defaults to 1."""
    return Symbol(((XFactor(tuple((tuple(int(v) for v in k), complex(c)) for k, c in coeffs.items())),
                    psi or xi_constant()),))


def xi_symbol(psi: XiFactor) -> Symbol:
    return Symbol(((XFactor(), psi),))


def conormal_symbol(line: TorusLine, delta: float, alpha: float, power: int = 0) -> Symbol:
    """``beta_delta(xi')^2 * chi_alpha(x_n) * xi_n^power`` relative to ``line``."""
    return Symbol(((XFactor(line=line, width=alpha), conormal_xi(line, delta, power)),),
                  {"delta": delta, "alpha": alpha, "power": power, "line": line.descriptor()})


def symbol_from_config(cfg: dict, line: TorusLine | None = None) -> Symbol:
    """Build a symbol from its JSON form.

    ``{"beta_delta": d, "chi_alpha": a, "xin_power": p}`` needs ``line``;
    ``{"fourier": [[j1, j2, re, im], ...], "xi_monomial": [p1, p2]}`` gives a
    trigonometric polynomial times a momentum monomial.
    """
    if "beta_delta" in cfg:
        if line is None:
            raise ValueError("conormal symbol needs a torus line")
        return conormal_symbol(line, float(cfg["beta_delta"]), float(cfg["chi_alpha"]),
                               int(cfg.get("xin_power", 0)))
    if "fourier" in cfg:
        coeffs = {(int(r[0]), int(r[1])): complex(r[2], r[3] if len(r) > 3 else 0.0) for r in cfg["fourier"]}
        p = cfg.get("xi_monomial")
        return trig_symbol(coeffs, xi_monomial(*p) if p else None)
    raise ValueError("symbol config needs 'beta_delta' or 'fourier'")


@dataclass(frozen=True)
class TestOperator:
    """``Op_h(a)`` in left quantization."""

    __test__ = False

    symbol: Symbol
    h: float

    def apply_at(self, modes, coeffs, X, order: int = 0):
        """``Op_h(a) u`` (order 0), its gradient (1) or Laplacian (2) at ``X``.

        ``u = sum_k coeffs_k e^{2 pi i <k, x>}``.
        """
        k = np.asarray(modes, dtype=float).reshape(-1, 2)
        c = np.asarray(coeffs, dtype=complex).reshape(-1)
        X = np.asarray(X, dtype=float)
        E = np.exp(2j * np.pi * (X @ k.T))
        out = 0
        for g, psi in self.symbol.terms:
            ck = c * psi(2 * np.pi * self.h * k)
            if order == 0:
                out = out + g.value(X) * (E @ ck)
                continue
            gv = g.value(X)
            gg = g.value(X, 1)
            if order == 1:
                out = out + gg * (E @ ck)[..., None] + 2j * np.pi * gv[..., None] * (E @ (ck[:, None] * k))
                continue
            gl = g.value(X, 2)
            kk = np.sum(k**2, -1)
            out = (out + gl * (E @ ck)
                   + 4j * np.pi * np.sum(gg * (E @ (ck[:, None] * k)), -1)
                   - 4 * np.pi**2 * gv * (E @ (ck * kk)))
        return out


def apply_op(T: TestOperator, modes, coeffs, resolution: int) -> SampledFunction:
    """Sample ``Op_h(a) u`` on the uniform ``resolution x resolution`` grid.

    Raises :class:`ResolutionError` when the grid cannot represent the
    product's Fourier content without aliasing.
    """
    k = np.asarray(modes).reshape(-1, 2)
    need = 2 * (T.symbol.fourier_order + int(np.max(np.abs(k)))) + 1
    if resolution < need:
        raise ResolutionError(f"grid {resolution} aliases; need at least {need}")
    X1, X2 = torus_grid(resolution)
    vals = T.apply_at(k, coeffs, np.stack([X1, X2], -1))
    return SampledFunction(vals, "torus", (X1, X2), np.full(vals.shape, 1.0 / resolution**2))


def matrix_element(T: TestOperator, family, h: float | None = None, slab: Slab | None = None) -> complex:
    """``<Op_h(a) phi_h, phi_h>`` as an exact double sum over Fourier pairs.

    With ``slab`` the inner product is taken over that region only.
    """
    if not isinstance(family, TorusFamily):
        raise TypeError("matrix elements are implemented for torus families only")
    h = T.h if h is None else h
    k, c = family.fourier(h)
    k = np.asarray(k, dtype=float)
    diff = (k[None, :, :] - k[:, None, :]).reshape(-1, 2)  # row k, column k'
    uniq, inv = np.unique(diff, axis=0, return_inverse=True)
    total = 0j
    for g, psi in T.symbol.terms:
        ghat = g.fourier(uniq, slab)[inv.reshape(-1)].reshape(len(k), len(k))
        total += np.sum((c * psi(2 * np.pi * h * k))[:, None] * np.conj(c)[None, :] * ghat)
    return complex(total)


def beta_multiplier(delta: float, h: float, m, length: float):
    """Multiplier ``chi_delta(|2 pi h m / L|)`` acting on circle mode ``m``."""
    return plateau(np.abs(2 * np.pi * h * np.asarray(m, dtype=float) / length), delta)


def curve_microlocalizer(delta: float, h: float, values, length: float):
    """Apply ``Op_h(beta_delta)`` to samples of a function on a closed curve.

    ``values`` are taken at equispaced arclength nodes (any common offset);
    the operator is the Fourier multiplier :func:`beta_multiplier`.
    """
    v = np.asarray(values)
    n = v.shape[-1]
    m = np.fft.fftfreq(n, 1.0 / n)
    return np.fft.ifft(np.fft.fft(v, axis=-1) * beta_multiplier(delta, h, m, length), axis=-1)


def microlocalize_defect(values, h: float, delta: float, length: float, weight=None) -> float:
    """``|int_H f u - int_H f Op_h(beta_delta) u|`` with ``f = weight`` (default 1)."""
    v = np.asarray(values, dtype=complex)
    f = np.ones(v.shape[-1]) if weight is None else np.asarray(weight)
    r = v - curve_microlocalizer(delta, h, v, length)
    return float(abs(np.sum(f * r)) * length / v.shape[-1])


def _interval_exp(j, a, b):
    """``int_a^b exp(2 pi i j x) dx`` for integer arrays ``j``."""
    j = np.asarray(j, dtype=float)
    out = np.full(j.shape, b - a, dtype=complex)
    nz = j != 0
    out[nz] = (np.exp(2j * np.pi * j[nz] * b) - np.exp(2j * np.pi * j[nz] * a)) / (2j * np.pi * j[nz])
    return out


@dataclass
class PhaseSpaceHistogram:
    """Cell weights over ``x``-cells and angular momentum bins."""

    weights: np.ndarray  # (nx, nx, n_angles)
    angle_centers: np.ndarray
    x_edges: np.ndarray = field(repr=False)

    @property
    def momentum_marginal(self) -> np.ndarray:
        return self.weights.sum((0, 1))


def phase_space_histogram(family: TorusFamily, h: float, n_x: int = 4, n_angles: int = 16) -> PhaseSpaceHistogram:
    """Empirical phase-space lift of ``phi_h``.

    The weight of cell ``Q x B`` is ``int_Q |Pi_B phi_h|^2`` where ``Pi_B``
    keeps the Fourier modes whose momentum ``2 pi h k`` has direction in
    ``B``.  Bins are centred at angles ``2 pi j / n_angles``.
    """
    k, c = family.fourier(h)
    k = np.asarray(k, dtype=int)
    ang = np.mod(np.arctan2(k[:, 1], k[:, 0]) + np.pi / n_angles, 2 * np.pi)
    b = np.minimum((ang / (2 * np.pi / n_angles)).astype(int), n_angles - 1)
    edges = np.linspace(0, 1, n_x + 1)
    W = np.zeros((n_x, n_x, n_angles))
    D = k[:, None, :] - k[None, :, :]
    pair = c[:, None] * np.conj(c)[None, :]
    same = b[:, None] == b[None, :]
    for i in range(n_x):
        I1 = _interval_exp(D[..., 0], edges[i], edges[i + 1])
        for j in range(n_x):
            cell = pair * I1 * _interval_exp(D[..., 1], edges[j], edges[j + 1])
            for bb in np.unique(b):
                sel = same & (b[:, None] == bb)
                W[i, j, bb] = float(np.real(np.sum(cell[sel])))
    return PhaseSpaceHistogram(W, 2 * np.pi * np.arange(n_angles) / n_angles, edges)
