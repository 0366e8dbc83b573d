"""Smooth compactly supported cutoffs built from the ``exp(-1/s)`` ramp.

The ramp ``S(s) = f(s) / (f(s) + f(1 - s))`` with ``f(s) = exp(-1/s)`` equals
the logistic function of ``u(s) = 1/(1 - s) - 1/s``, which gives closed-form
derivatives without overflow.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def ramp(s, order: int = 0):
    """Smooth step from 0 (``s <= 0``) to 1 (``s >= 1``) and its derivatives.

    Parameters
    ----------
    s : array_like
    order : int
        Derivative order, 0 to 3.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    if order == 0:
        out[s >= 1.0] = 1.0
    inside = (s > 0.0) & (s < 1.0)
    if not np.any(inside):
        return out
    t = s[inside]
    u = 1.0 / (1.0 - t) - 1.0 / t
    sig = expit(u)
    if order == 0:
        out[inside] = sig
        return out
    d1 = sig * expit(-u)
    u1 = 1.0 / (1.0 - t) ** 2 + 1.0 / t**2
    if order == 1:
        out[inside] = d1 * u1
        return out
    d2 = d1 * (1.0 - 2.0 * sig)
    u2 = 2.0 / (1.0 - t) ** 3 - 2.0 / t**3
    if order == 2:
        out[inside] = d2 * u1**2 + d1 * u2
        return out
    if order == 3:
        d3 = d1 * (1.0 - 6.0 * sig + 6.0 * sig**2)
        u3 = 6.0 / (1.0 - t) ** 4 + 6.0 / t**4
        out[inside] = d3 * u1**3 + 3.0 * d2 * u1 * u2 + d1 * u3
        return out
    raise ValueError(f"ramp derivative order must be 0..3, got {order}")


def plateau(t, width: float, order: int = 0):
    """Even cutoff equal to 1 on ``|t| <= width/2`` and 0 on ``|t| >= width``.

    This is the chi_alpha / chi_delta profile; ``order`` selects the derivative
    in ``t``.
    """
    t = np.asarray(t, dtype=float)
    if width <= 0:
        raise ValueError("cutoff width must be positive")
    s = (width - np.abs(t)) / (0.5 * width)
    if order == 0:
        return ramp(s, 0)
    ds = -np.sign(t) * 2.0 / width
    return ramp(s, order) * ds**order


def plateau_breakpoints(center: float, width: float) -> list[float]:
    """Points where :func:`plateau` centred at ``center`` is not analytic."""
    return [center - width, center - width / 2, center + width / 2, center + width]


def lipschitz_constant() -> float:
    """``sup |chi_w'| * w`` for :func:`plateau`; independent of the width."""
    s = np.linspace(1e-6, 1 - 1e-6, 200001)
    return float(2.0 * np.max(ramp(s, 1)))


def bump(t, order: int = 0):
    """Cutoff in C_c^inf(-1, 1), identically 1 on [-1/2, 1/2]."""
    return plateau(t, 1.0, order)
