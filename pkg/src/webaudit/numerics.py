"""Small numerical kernels: bracketed root solves, Gauss-Legendre quadrature,
Richardson tables and central-difference stencils."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from webaudit.errors import MonotonicityError, NotBracketedError, RootError

# 1-D central stencils, O(h^2), indexed by derivative order; offsets -r..r
STENCILS = {
    0: np.array([1.0]),
    1: np.array([-0.5, 0.0, 0.5]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


def solve_monotone(g, target, lo, hi, dg=None, coarse=1e-3, tol=1e-12, max_iter=200):
    """Solve ``g(t) = target`` for t in [lo, hi] where g is strictly monotone.

    Bisection shrinks the bracket to ``coarse`` (absolute), then Newton polishes
    until the step is below ``tol * max(1, |t|)``.  Newton steps that leave the
    bracket fall back to bisection.
    """
    if not lo < hi:
        raise NotBracketedError(f"empty bracket [{lo}, {hi}]")
    flo = g(lo) - target
    fhi = g(hi) - target
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise NotBracketedError(f"no sign change of g - {target!r} on [{lo}, {hi}]")
    increasing = fhi > 0
    if dg is not None:
        for t in (lo, hi):
            s = dg(t)
            if s == 0.0 or (s > 0) != increasing:
                raise MonotonicityError(f"g is not strictly monotone on [{lo}, {hi}] (g'({t}) = {s})")

    a, b = lo, hi
    it = 0
    while b - a > coarse and it < max_iter:
        m = 0.5 * (a + b)
        fm = g(m) - target
        if fm == 0.0:
            return m
        if (fm > 0) == increasing:
            b = m
        else:
            a = m
        it += 1

    t = 0.5 * (a + b)
    for _ in range(max_iter):
        ft = g(t) - target
        if ft == 0.0:
            return t
        if (ft > 0) == increasing:
            b = t
        else:
            a = t
        step = None
        if dg is not None:
            slope = dg(t)
            if slope != 0.0 and (slope > 0) == increasing:
                step = -ft / slope
            elif slope == 0.0 or (slope > 0) != increasing:
                raise MonotonicityError(f"derivative changes sign inside [{lo}, {hi}] at {t}")
        if step is None:
            # secant-free fallback: bisection
            new = 0.5 * (a + b)
        else:
            new = t + step
            if not (a <= new <= b):
                new = 0.5 * (a + b)
        if abs(new - t) <= tol * max(1.0, abs(t)) or b - a <= tol * max(1.0, abs(t)):
            return new
        t = new
    raise RootError(f"root solve did not converge on [{lo}, {hi}]")


def expand_bracket(g, target, lo, hi, positive=None, max_expand=12):
    """Widen [lo, hi] until g - target changes sign; multiplicative when ``positive``."""
    if positive is None:
        positive = lo > 0
    for _ in range(max_expand + 1):
        try:
            flo, fhi = g(lo) - target, g(hi) - target
        except ArithmeticError:
            flo = fhi = None
        if flo is not None and (flo > 0) != (fhi > 0):
            return lo, hi
        if positive:
            lo, hi = lo / 2.0, hi * 2.0
        else:
            w = hi - lo
            lo, hi = lo - w, hi + w
    raise NotBracketedError(f"could not bracket g = {target!r}")


@lru_cache(maxsize=None)
def gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def integrate(func, a, b, nodes=10, segments=1):
    """Composite Gauss-Legendre integral of a scalar function on [a, b]."""
    if a == b:
        return 0.0
    x, w = gauss_legendre(nodes)
    edges = np.linspace(a, b, segments + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        total += half * sum(wi * func(mid + half * xi) for xi, wi in zip(x, w))
    return total


def cumulative_integral(func, grid, anchor, nodes=10):
    """Values of the integral from ``anchor`` to each point of ``grid``.

    Integrates interval by interval between consecutive knots (the anchor is
    inserted as a knot) with Gauss-Legendre rules and accumulates outward.
    """
    grid = np.asarray(grid, dtype=float)
    knots = np.unique(np.concatenate([grid, [anchor]]))
    ia = int(np.searchsorted(knots, anchor))
    vals = np.zeros_like(knots)
    for k in range(ia + 1, len(knots)):
        vals[k] = vals[k - 1] + integrate(func, knots[k - 1], knots[k], nodes)
    for k in range(ia - 1, -1, -1):
        vals[k] = vals[k + 1] - integrate(func, knots[k], knots[k + 1], nodes)
    return np.interp(grid, knots, vals) if len(grid) else vals[:0]


def richardson(estimates, ratio=2.0, order=2):
    """Extrapolate estimates at steps h, h/ratio, h/ratio^2, ... (even error series)."""
    table = [list(estimates)]
    p = order
    while len(table[-1]) > 1:
        prev = table[-1]
        f = ratio**p
        table.append([(f * prev[i + 1] - prev[i]) / (f - 1.0) for i in range(len(prev) - 1)])
        p += 2
    return table[-1][0]


def mixed_stencil(func, order, point, steps):
    """Tensor-product central difference of ``func(x, y)`` at one step pair."""
    i, j = order
    cx, cy = STENCILS[i], STENCILS[j]
    rx, ry = len(cx) // 2, len(cy) // 2
    hx, hy = steps
    x0, y0 = point
    total = 0.0
    for a, wa in enumerate(cx):
        if wa == 0.0:
            continue
        for b, wb in enumerate(cy):
            if wb == 0.0:
                continue
            total += wa * wb * func(x0 + (a - rx) * hx, y0 + (b - ry) * hy)
    return total / (hx**i * hy**j)


def shoelace(points):
    """Signed polygon area (counter-clockwise positive) of a closed polyline."""
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_finite(*values):
    return all(math.isfinite(v) for v in values)
