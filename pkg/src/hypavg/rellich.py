"""Rellich identity and commutator-to-bracket checks on torus strips.

For an eigenfunction ``-h^2 Delta phi = phi`` and ``A = Op_h(a)``, Green's
formula on ``Omega`` gives

    (i/h) int_Omega [-h^2 Delta, A] phi . conj(phi)
        = int_{dOmega} (hD_nu A phi) conj(phi) + (A phi) conj(hD_nu phi),

with ``hD_nu = -i h d_nu`` and ``nu`` the outward normal.  On the flat torus
the commutator satisfies exactly

    (i/h) [-h^2 Delta, Op_h(a)] = Op_h({|xi|^2, a}) - i h Op_h(Delta_x a),

so the bracket approximation error is ``h |<Op_h(Delta_x a) phi, phi>_Omega|``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .eigenfamily import TorusFamily
from .errors import ResolutionError
from .manifold import TorusLine
from .measures import analytic_defect_measure, integrate_symbol
from .quantize import (
    Slab,
    Symbol,
    TestOperator,
    XFactor,
    XiFactor,
    beta,
    conormal_symbol,
    matrix_element,
)
from .restriction import FitResult, decay_fit, restriction_norm

GL_NODES = 32
QUADRATURE_TOL = 1e-9


def _horizontal(line: TorusLine) -> bool:
    return abs(abs(line.n[1]) - 1.0) < 1e-15


@dataclass(frozen=True)
class StripDomain:
    """``Omega = {a < x2 < b}`` on the torus, ``0 < b - a < 1``.

    The upper boundary has outward normal ``+e2`` and the lower one ``-e2``.
    Construction runs a Green's identity self-test.
    """

    a: float
    b: float

    def __post_init__(self):
        if not 0 < self.b - self.a < 1:
            raise ValueError("strip width must lie in (0, 1)")
        self._self_test()

    @property
    def boundaries(self) -> tuple:
        """``(level, outward normal)`` pairs."""
        return ((self.b, np.array([0.0, 1.0])), (self.a, np.array([0.0, -1.0])))

    @property
    def slab(self) -> Slab:
        return Slab(TorusLine.circle(2, self.a), 0.0, self.b - self.a)

    def nodes(self, breakpoints=(), n1: int = 64, panel_length: float = 0.05, per_panel: int = GL_NODES):
        """Tensor nodes: trapezoid in ``x1``, composite Gauss-Legendre in ``x2``."""
        return _panel_nodes(self.a, self.b, breakpoints, n1, panel_length, per_panel)

    def _self_test(self):
        # u = e(x1 + 2 x2), v = e(x1 + x2): Delta u = -20 pi^2 u, Delta v = -8 pi^2 v
        ku, kv = np.array([1.0, 2.0]), np.array([1.0, 1.0])
        X, W = self.nodes(n1=8)
        u, v = np.exp(2j * np.pi * X @ ku), np.exp(2j * np.pi * X @ kv)
        lap_u, lap_v = -4 * np.pi**2 * (ku @ ku), -4 * np.pi**2 * (kv @ kv)
        lhs = np.sum(W * (lap_u * u * np.conj(v) - u * lap_v * np.conj(v)))
        rhs = 0j
        x1 = np.arange(8) / 8
        for level, nu in self.boundaries:
            P = np.stack([x1, np.full_like(x1, level)], -1)
            ub, vb = np.exp(2j * np.pi * P @ ku), np.exp(2j * np.pi * P @ kv)
            rhs += np.mean(2j * np.pi * (ku @ nu) * ub * np.conj(vb) - ub * np.conj(2j * np.pi * (kv @ nu) * vb))
        if abs(lhs - rhs) > 1e-10:
            raise RuntimeError(f"strip Green identity self-test failed by {abs(lhs - rhs):.3e}")


def _panel_nodes(lo0, hi0, breakpoints, n1, panel_length, per_panel=GL_NODES):
    cuts = sorted({lo0, hi0, *(p for p in breakpoints if lo0 < p < hi0)})
    xg, wg = np.polynomial.legendre.leggauss(per_panel)
    x2, w2 = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        m = max(1, int(math.ceil((hi - lo) / panel_length)))
        e = np.linspace(lo, hi, m + 1)
        for p, q in zip(e[:-1], e[1:]):
            x2.append(0.5 * (q - p) * xg + 0.5 * (q + p))
            w2.append(0.5 * (q - p) * wg)
    x2, w2 = np.concatenate(x2), np.concatenate(w2)
    x1 = np.arange(n1) / n1
    X = np.stack(np.meshgrid(x1, x2, indexing="xy"), -1)
    return X, np.outer(w2, np.full(n1, 1.0 / n1))


def _symbol_breakpoints(symbol: Symbol) -> list[float]:
    pts = []
    for g, _ in symbol.terms:
        if g.line is None:
            continue
        if not _horizontal(g.line):
            raise ValueError("strip quadrature needs cutoffs along horizontal lines")
        base = g.line.base[1]
        for k in (-1, 0, 1):
            pts += [base + k + g.line.n[1] * p for p in g.breakpoints()]
    return pts


def _x1_nodes(symbol: Symbol, k) -> int:
    orders = [0 if g.order is None else g.order for g, _ in symbol.terms]
    trig1 = max(int(np.max(np.abs(g.modes[:, 0]))) if len(g.trig) else 0 for g, _ in symbol.terms)
    return 2 * (max(orders + [trig1]) + 2 * int(np.max(np.abs(k[:, 0])))) + 8


def _commutator_integral(T: TestOperator, k, c, domain: StripDomain | None, refine: int) -> tuple[complex, float]:
    """``(i/h) int_Omega [-h^2 Delta, A] phi conj(phi)`` by quadrature; returns value and scale."""
    h = T.h
    kmax = float(np.max(np.sqrt(np.sum(k**2, -1))))
    n1 = _x1_nodes(T.symbol, k) * refine
    panel = min(0.02, 4.0 / (kmax + 1)) / refine
    if domain is None and all(g.line is None for g, _ in T.symbol.terms):
        x = np.arange(n1) / n1
        X = np.stack(np.meshgrid(x, x, indexing="xy"), -1)
        W = np.full(X.shape[:-1], 1.0 / n1**2)
    elif domain is None:
        X, W = _panel_nodes(0.0, 1.0, _symbol_breakpoints(T.symbol), n1, panel)
    else:
        X, W = domain.nodes(_symbol_breakpoints(T.symbol), n1, panel)
    phi = np.exp(2j * np.pi * X @ k.T) @ c
    Au = T.apply_at(k, c, X, 0)
    lap = T.apply_at(k, c, X, 2)
    integrand = (-h**2 * lap - Au) * np.conj(phi)
    return complex(1j / h * np.sum(W * integrand)), float(np.sum(W * np.abs(integrand)) / h)


def _boundary_terms(T: TestOperator, k, c, domain: StripDomain | None) -> complex:
    if domain is None:
        return 0j
    h = T.h
    n1 = _x1_nodes(T.symbol, k)
    x1 = np.arange(n1) / n1
    total = 0j
    for level, nu in domain.boundaries:
        P = np.stack([x1, np.full_like(x1, level)], -1)
        E = np.exp(2j * np.pi * P @ k.T)
        phi = E @ c
        dn_phi = (E @ (c[:, None] * k)) @ nu * 2j * np.pi
        Au = T.apply_at(k, c, P, 0)
        dn_Au = T.apply_at(k, c, P, 1) @ nu
        total += np.mean((-1j * h * dn_Au) * np.conj(phi) + Au * np.conj(-1j * h * dn_phi))
    return complex(total)


def _torus_data(family, h):
    if not isinstance(family, TorusFamily):
        raise TypeError("Rellich checks need a torus family")
    k, c = family.fourier(h)
    return np.asarray(k, float).reshape(-1, 2), np.asarray(c, complex)


def _checked_commutator(T, k, c, domain):
    a, _ = _commutator_integral(T, k, c, domain, 1)
    b, scale = _commutator_integral(T, k, c, domain, 2)
    if abs(a - b) > QUADRATURE_TOL * max(1.0, scale):
        raise ResolutionError(f"strip quadrature unresolved: refinement changed the integral by {abs(a - b):.3e}")
    return b


@dataclass
class RellichResult:
    h: float
    commutator: complex
    boundary: complex
    residual: float


def rellich_residual(T: TestOperator, family, h: float | None = None, domain: StripDomain | None = None,
                     refine: int | None = None) -> RellichResult:
    """Compare both sides of the Rellich identity on ``domain`` (full torus if ``None``).

    The residual is ``|LHS - RHS| / (|LHS| + |RHS| + 1)``.  With ``refine``
    the quadrature runs once at that refinement without the self-check.
    """
    h = T.h if h is None else h
    if h != T.h:
        T = TestOperator(T.symbol, h)
    k, c = _torus_data(family, h)
    if refine is None:
        lhs = _checked_commutator(T, k, c, domain)
    else:
        lhs, _ = _commutator_integral(T, k, c, domain, refine)
    rhs = _boundary_terms(T, k, c, domain)
    return RellichResult(h, lhs, rhs, abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1))


@dataclass(frozen=True)
class BracketSymbol:
    """``sigma = beta_delta(xi')^2 chi_alpha(x_n) xi_n`` relative to ``line`` and its bracket with ``|xi|^2``.

    On the flat torus ``R(x', x_n, xi') = |xi'|^2`` carries no ``x``
    dependence, so ``q_delta = 0`` and the bracket is
    ``2 chi_alpha'(x_n) beta_delta^2 xi_n^2``.
    """

    line: TorusLine
    delta: float
    alpha: float

    @property
    def symbol(self) -> Symbol:
        return conormal_symbol(self.line, self.delta, self.alpha, power=1)

    @property
    def bracket(self) -> Symbol:
        d, n, delta = self.line.d, self.line.n, self.delta
        psi = XiFactor(lambda xi: 2 * beta(delta, xi @ d) ** 2 * (xi @ n) ** 2, "2 beta^2 xi_n^2")
        return Symbol(((XFactor(line=self.line, width=self.alpha, cutoff_order=1), psi),))

    @property
    def q_delta(self) -> Symbol:
        return Symbol(((XFactor(trig=(((0, 0), 0.0),)), XiFactor(lambda xi: np.zeros(xi.shape[:-1]), "0")),))

    def check(self, n: int = 64, seed: int = 0) -> float:
        """Max difference between the structured and the generic bracket on a grid."""
        rng = np.random.default_rng(seed)
        x = np.stack(np.meshgrid(np.arange(n) / n, np.arange(n) / n), -1).reshape(-1, 2)
        xi = rng.uniform(-1.5, 1.5, x.shape)
        return float(np.max(np.abs(self.bracket(x, xi) - self.symbol.bracket_with_energy()(x, xi))))


@dataclass
class CommutatorRow:
    h: float
    commutator: complex
    bracket: complex
    d: float
    predicted_d: float


@dataclass
class CommutatorFit:
    rows: list
    fit: FitResult

    @property
    def order(self) -> float:
        return self.fit.exponent


def commutator_vs_bracket(symbol: Symbol, family, hs, domain: StripDomain | None = None) -> CommutatorFit:
    """Fit the order of ``d(h) = |<(i/h)[-h^2 Delta, A] phi, phi>_Omega - <Op({|xi|^2, a}) phi, phi>_Omega|``.

    The commutator side comes from strip quadrature, the bracket side from
    exact Fourier sums; ``predicted_d = h |<Op(Delta_x a) phi, phi>_Omega|``.
    """
    slab = None if domain is None else domain.slab
    br, lap = symbol.bracket_with_energy(), symbol.x_laplacian()
    rows = []
    for h in hs:
        k, c = _torus_data(family, h)
        T = TestOperator(symbol, h)
        lhs = _checked_commutator(T, k, c, domain)
        rhs = matrix_element(TestOperator(br, h), family, h, slab)
        pred = h * abs(matrix_element(TestOperator(lap, h), family, h, slab))
        rows.append(CommutatorRow(h, lhs, rhs, abs(lhs - rhs), pred))
    return CommutatorFit(rows, decay_fit([r.h for r in rows], [r.d for r in rows]))


TRACE_COLUMNS = ("h", "delta", "alpha", "mic_normal_sq", "mic_dirichlet_sq", "boundary_lhs", "commutator",
                 "boundary_terms", "bracket_term", "measure_bracket", "remainder_bound", "slack", "holds")


@dataclass
class InequalityRecord:
    """Every term of the microlocalized Rellich inequality at one ``(h, delta, alpha)``.

    ``boundary_lhs = mic_normal_sq + (1 - 2 delta^2) mic_dirichlet_sq`` is
    compared with ``|commutator| + slack`` where ``slack = sqrt(h)``.
    """

    h: float
    delta: float
    alpha: float
    mic_normal_sq: float
    mic_dirichlet_sq: float
    boundary_lhs: float
    commutator: float
    boundary_terms: float
    bracket_term: float
    measure_bracket: float
    remainder_bound: float
    slack: float
    holds: bool = field(default=False)

    def row(self) -> dict:
        return asdict(self)


def main_inequality_trace(family, h: float, delta: float, alpha: float, H: TorusLine) -> InequalityRecord:
    """Evaluate the microlocalized Rellich inequality for ``H = {x2 = level}``.

    ``Omega`` is the strip of width 1/2 below ``H`` and ``A = Op_h(sigma)``
    with ``sigma`` from :class:`BracketSymbol`.  The commutator is evaluated
    exactly through the bracket identity; the boundary terms come from
    Green's formula.  ``measure_bracket`` is the defect-measure integral of
    the bracket over ``Omega`` (NaN without a closed-form measure) and
    ``remainder_bound`` is the ``q_delta`` contribution, zero on the flat torus.
    """
    if not _horizontal(H):
        raise ValueError("the trace needs a horizontal line")
    level = H.base[1]
    domain = StripDomain(level - 0.5, level)
    bs = BracketSymbol(H, delta, alpha)
    slab = domain.slab
    k, c = _torus_data(family, h)
    bracket = matrix_element(TestOperator(bs.bracket, h), family, h, slab)
    lap = matrix_element(TestOperator(bs.symbol.x_laplacian(), h), family, h, slab)
    comm = bracket - 1j * h * lap
    boundary = _boundary_terms(TestOperator(bs.symbol, h), k, c, domain)
    n2 = restriction_norm(family, h, H, delta=delta, normal=True) ** 2
    d2 = restriction_norm(family, h, H, delta=delta) ** 2
    try:
        mu = analytic_defect_measure(family, h)
        meas = integrate_symbol(mu, bs.bracket, slab).real
    except (TypeError, ValueError):
        meas = math.nan
    lhs = n2 + (1 - 2 * delta**2) * d2
    slack = math.sqrt(h)
    return InequalityRecord(h, delta, alpha, n2, d2, lhs, abs(comm), abs(boundary), bracket.real, meas, 0.0,
                            slack, bool(lhs <= abs(comm) + slack))
