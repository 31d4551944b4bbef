"""Gauss-Legendre rules: composite 1-D, product rules on triangles and
rectangles, and a vectorised adaptive bisection integrator."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import NumericsError

PANEL_ORDER = 8


@lru_cache(maxsize=None)
def _gauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_nodes(a: float, b: float, n: int, order: int = PANEL_ORDER):
    """Nodes and weights of ``n // order`` equal Gauss panels on [a, b]."""
    panels = max(1, n // order)
    x, w = _gauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def triangle_nodes(a: float, b: float, n: int):
    """Product rule on {a <= t2 <= t1 <= b}.

    The inner variable is mapped as ``t2 = a + (t1 - a) s`` with ``s`` in
    [0, 1]; returns flat arrays ``t1, t2, weight``.
    """
    t1, w1 = composite_nodes(a, b, n)
    s, ws = composite_nodes(0.0, 1.0, n)
    span = t1 - a
    T1 = np.repeat(t1, s.size)
    T2 = a + np.outer(span, s).ravel()
    W = np.outer(w1 * span, ws).ravel()
    return T1, T2, W


def rectangle_nodes(a1: float, b1: float, a2: float, b2: float, n: int):
    """Product rule on [a1, b1] x [a2, b2]; returns ``t1, t2, weight``."""
    t1, w1 = composite_nodes(a1, b1, n)
    t2, w2 = composite_nodes(a2, b2, n)
    return (
        np.repeat(t1, t2.size),
        np.tile(t2, t1.size),
        np.outer(w1, w2).ravel(),
    )


def _gl_on(f, a, b, order):
    x, w = _gauss(order)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    pts = mid[:, None] + half[:, None] * x[None, :]
    vals = f(pts.ravel()).reshape(pts.shape)
    return half * (vals @ w)


def adaptive_integrate(
    f,
    breakpoints,
    rtol: float = 1e-10,
    atol: float = 0.0,
    order: int = 15,
    max_intervals: int = 400_000,
):
    """Integrate a vectorised ``f`` over [breakpoints[0], breakpoints[-1]].

    Every interval is compared against its two halves; intervals whose
    difference is too large are bisected, the others are accepted. Returns
    ``(value, error_estimate)``.
    """
    bp = np.unique(np.asarray(breakpoints, dtype=float))
    if bp.size < 2:
        return 0.0, 0.0
    a, b = bp[:-1], bp[1:]
    done, done_err = 0.0, 0.0
    whole = None
    for _ in range(60):
        m = 0.5 * (a + b)
        coarse = _gl_on(f, a, b, order)
        fine = _gl_on(f, a, m, order) + _gl_on(f, m, b, order)
        err = np.abs(fine - coarse)
        total = done + float(np.sum(fine))
        if whole is None:
            whole = abs(total)
        tol = max(rtol * max(abs(total), whole), atol)
        if done_err + float(np.sum(err)) <= tol:
            return total, done_err + float(np.sum(err))
        # interval share proportional to length keeps the criterion local
        share = tol * (b - a) / (bp[-1] - bp[0])
        accept = err <= share
        done += float(np.sum(fine[accept]))
        done_err += float(np.sum(err[accept]))
        a, b, m = a[~accept], b[~accept], m[~accept]
        if 2 * a.size > max_intervals:
            raise NumericsError(
                "adaptive quadrature exceeded interval budget",
                achieved=done_err + float(np.sum(err[~accept])),
            )
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
    raise NumericsError("adaptive quadrature did not converge", achieved=float(np.sum(err)))
