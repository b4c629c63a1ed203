"""Gauss–Legendre rules, including graded rules for endpoint singularities."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre_unit(n: int):
    """Nodes and weights of the n-point Gauss–Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def graded_rule(a, b, levels=12, nodes=32, ratio=0.25, ends="both"):
    """Composite rule on [a, b] with panels shrinking geometrically toward the
    singular end(s). Handles any integrable algebraic endpoint singularity.

    ``a`` and ``b`` may be arrays of equal shape; the returned nodes and weights
    carry an extra trailing axis.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = gauss_legendre_unit(nodes)
    # breakpoints of [0, 1] graded toward 0
    cuts = np.concatenate([[0.0], ratio ** np.arange(levels, -1, -1)])
    lo, hi = cuts[:-1], cuts[1:]
    ux = (lo[:, None] + (hi - lo)[:, None] * x[None, :]).ravel()
    uw = ((hi - lo)[:, None] * w[None, :]).ravel()
    if ends == "left":
        u, uwt = ux, uw
    elif ends == "right":
        u, uwt = 1.0 - ux[::-1], uw[::-1]
    elif ends == "both":
        u = np.concatenate([0.5 * ux, 1.0 - 0.5 * ux[::-1]])
        uwt = np.concatenate([0.5 * uw, 0.5 * uw[::-1]])
    else:
        raise ValueError(f"unknown ends={ends!r}")
    span = (b - a)[..., None]
    return a[..., None] + span * u, span * uwt


def power_rule(a, b, nodes=32, power=4):
    """Rule on [a, b] for integrands singular at both ends, by the substitution
    r = a + (m - a) w^power on each half (m the midpoint)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = gauss_legendre_unit(nodes)
    u = 0.5 * x**power
    du = 0.5 * power * x ** (power - 1) * w
    u = np.concatenate([u, 1.0 - u[::-1]])
    du = np.concatenate([du, du[::-1]])
    span = (b - a)[..., None]
    return a[..., None] + span * u, span * du
