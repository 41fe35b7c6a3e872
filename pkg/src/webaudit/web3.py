"""3-webs of verticals, horizontals and the level curves of f(x, y).

Curvature of the Chern connection, the de Saint Robert residual, the Thomsen
hexagon closure gap, level-curve tracing and recovery of an additive
representation phi(f) = U1(x) + U2(y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np

from webaudit import expr as ex
from webaudit.errors import (
    DomainExitError,
    PreconditionError,
    RegularityError,
    RootError,
    WebauditError,
)
from webaudit.field import DiffConfig, GridField, finite_difference_partial
from webaudit.numerics import cumulative_integral, integrate, solve_monotone

ROUTES = ("auto", "symbolic", "numeric")


class Web3:
    """Verticals, horizontals and level curves of ``f`` over ``domain``.

    Construction sweeps a 9 x 9 grid and rejects the web when |f_x| or |f_y|
    drops below ``reg_floor`` (the three foliations must be in general position).
    """

    def __init__(self, f, domain=None, reg_floor=1e-8, sweep=9):
        self.f = f
        if domain is None and isinstance(f, GridField):
            domain = f.region((1, 0)).intersect(f.region((0, 1)))
        if domain is None:
            domain = f.validity
        if domain is None:
            raise ValueError("an unbounded field needs an explicit domain")
        self.domain = domain
        self.reg_floor = reg_floor
        signs = set()
        for x, y in domain.probe_grid(sweep):
            try:
                fx = f.partial((1, 0), (x, y))
                fy = f.partial((0, 1), (x, y))
            except (ArithmeticError, WebauditError) as err:
                raise RegularityError(f"gradient unavailable at ({x:.6g}, {y:.6g}): {err}") from None
            if abs(fx) < reg_floor or abs(fy) < reg_floor:
                raise RegularityError(
                    f"foliations not in general position at ({x:.6g}, {y:.6g}): f_x={fx:.3g}, f_y={fy:.3g}"
                )
            signs.add((fx > 0, fy > 0))
        if len(signs) != 1:
            raise RegularityError("f_x or f_y changes sign on the domain")
        self.fx_positive, self.fy_positive = signs.pop()

    @property
    def ratio_sign(self):
        return 1.0 if self.fx_positive == self.fy_positive else -1.0

    def check_point(self, x, y):
        if not self.domain.contains(x, y):
            raise RegularityError(f"point ({x}, {y}) outside the web domain")

    def _route(self, route):
        if route not in ROUTES:
            raise ValueError(f"route must be one of {ROUTES}")
        if route == "auto":
            return "symbolic" if self.f.symbolic else "numeric"
        if route == "symbolic" and not self.f.symbolic:
            raise ValueError("symbolic route needs a closed-form field")
        return route

    # symbolic pieces, built once per web
    @cached_property
    def _log_ratio_expr(self):
        fx = self.f.derivative_expr((1, 0))
        fy = self.f.derivative_expr((0, 1))
        ratio = ex.make_binary("div", fx, fy)
        if self.ratio_sign < 0:
            ratio = ex.make_unary("neg", ratio)
        return ex.simplify(ex.make_unary("ln", ratio))

    @cached_property
    def saint_robert_expr(self):
        return self.f.derivative_expr((1, 1), base=self._log_ratio_expr)

    @cached_property
    def curvature_expr(self):
        fx = self.f.derivative_expr((1, 0))
        fy = self.f.derivative_expr((0, 1))
        return ex.make_unary(
            "neg", ex.make_binary("div", self.saint_robert_expr, ex.make_binary("mul", fx, fy))
        )

    def log_ratio(self, x, y):
        fx = self.f.partial((1, 0), (x, y))
        fy = self.f.partial((0, 1), (x, y))
        return math.log(abs(fx)) - math.log(abs(fy))

    @cached_property
    def _log_ratio_grid(self):
        return self.f.derive(lambda fx, fy: np.log(np.abs(fx)) - np.log(np.abs(fy)), [(1, 0), (0, 1)])

    def _regular_at(self, x, y):
        self.check_point(x, y)
        fx = self.f.partial((1, 0), (x, y))
        fy = self.f.partial((0, 1), (x, y))
        if abs(fx) < self.reg_floor or abs(fy) < self.reg_floor:
            raise RegularityError(f"regularity floor violated at ({x}, {y})")
        return fx, fy


def saint_robert_residual(web, point, route="auto", cfg=None):
    """Mixed partial (d^2/dx dy) ln(f_x / f_y) at ``point``."""
    x, y = point
    web._regular_at(x, y)
    route = web._route(route)
    if route == "symbolic":
        return web.f.eval_expr(web.saint_robert_expr, x, y)
    if isinstance(web.f, GridField):
        return web._log_ratio_grid.partial((1, 1), (x, y))
    return finite_difference_partial(web.log_ratio, (1, 1), (x, y), cfg or DiffConfig(levels=2))


def chern_curvature(web, point, route="auto", cfg=None):
    """K = -(1/(f_x f_y)) * (ln(f_x/f_y))_xy."""
    fx, fy = web._regular_at(*point)
    return -saint_robert_residual(web, point, route, cfg) / (fx * fy)


@dataclass
class CurvatureReport:
    probes: list
    curvature: list
    residuals: list
    failures: dict
    tolerance: float
    route: str
    verdict: str  # "trivial" | "non-trivial" | "inconclusive"

    @property
    def max_abs_curvature(self):
        vals = [abs(v) for v in self.curvature if v is not None]
        return max(vals) if vals else float("nan")

    @property
    def max_abs_residual(self):
        vals = [abs(v) for v in self.residuals if v is not None]
        return max(vals) if vals else float("nan")


def probe_points(web, n, margin=0.1):
    rect = web.domain.inset(margin)
    if isinstance(web.f, GridField):
        rect = rect.intersect(web._log_ratio_grid.region((1, 1)))
    return rect.probe_grid(n)


def separability_test(web, n=5, tol=1e-8, route="auto", margin=0.1):
    """Probe K and the de Saint Robert residual on an n x n grid.

    Verdict is trivial iff max |residual| <= tol; inconclusive when more than
    10% of the probes fail.
    """
    if n < 3:
        raise ValueError("need n >= 3 probes per axis")
    route = web._route(route)
    probes = probe_points(web, n, margin)
    ks, rs, failures = [], [], {}
    for k, p in enumerate(probes):
        try:
            r = saint_robert_residual(web, p, route)
            fx, fy = web._regular_at(*p)
            ks.append(-r / (fx * fy))
            rs.append(r)
        except (ArithmeticError, WebauditError) as err:
            failures[k] = str(err)
            ks.append(None)
            rs.append(None)
    if len(failures) > 0.1 * len(probes):
        verdict = "inconclusive"
    else:
        worst = max(abs(r) for r in rs if r is not None)
        verdict = "trivial" if worst <= tol else "non-trivial"
    return CurvatureReport(probes, ks, rs, failures, tol, route, verdict)


# ----------------------------------------------------------------------------
# hexagon closure


@dataclass
class HexagonReport:
    x0: float
    y0: float
    x1: float
    x2: float
    y1: float
    y2: float
    y2_closing: float
    gap: float
    polylines: dict = dc_field(default_factory=dict)
    vacuous: bool = False
    note: str = ""


def _solve_y(web, x, target):
    """y with f(x, y) = target inside the domain."""
    f = web.f
    d = web.domain
    g = lambda y: f.value(x, y)  # noqa: E731
    dg = lambda y: f.partial((0, 1), (x, y))  # noqa: E731
    return solve_monotone(g, target, d.ylo, d.yhi, dg=dg, coarse=1e-3 * d.height, tol=1e-13)


def _level_polyline(web, a, b, level, n=33):
    """Points of {f = level} between the abscissae of a and b."""
    pts = []
    for x in np.linspace(a[0], b[0], n):
        try:
            pts.append((float(x), _solve_y(web, float(x), level)))
        except RootError:
            continue
    return pts


def thomsen_closure_gap(web, x0, y0, x1, x2, polylines=True):
    """Hexagon construction from the base data; gap = y2' - y2.

    y1 solves f(x0, y1) = f(x1, y0), y2 solves f(x1, y2) = f(x2, y1) and
    y2' solves f(x0, y2') = f(x2, y0).  Only level sets are used, so the gap
    is unchanged by monotone relabeling of f.
    """
    if len({x0, x1, x2}) != 3:
        raise ValueError("x0, x1, x2 must be distinct")
    for x in (x0, x1, x2):
        web.check_point(x, y0)
    f = web.f
    y1 = _solve_y(web, x0, f.value(x1, y0))
    y2 = _solve_y(web, x1, f.value(x2, y1))
    y2c = _solve_y(web, x0, f.value(x2, y0))
    lines = {}
    if polylines:
        lines = {
            "level_1": _level_polyline(web, (x1, y0), (x0, y1), f.value(x1, y0)),
            "level_2": _level_polyline(web, (x2, y0), (x0, y2c), f.value(x2, y0)),
            "level_3": _level_polyline(web, (x2, y1), (x1, y2), f.value(x2, y1)),
            "verticals": [[(x, y0), (x, max(y2, y2c, y1))] for x in (x0, x1, x2)],
            "horizontals": [[(x0, y), (x2, y)] for y in (y0, y1)],
            "defect": [(x0, y2), (x0, y2c)],
        }
    return HexagonReport(x0, y0, x1, x2, y1, y2, y2c, y2c - y2, lines)


# ----------------------------------------------------------------------------
# level curves


def trace_level_curve(web, seed, span, step=0.01):
    """Follow {f = f(seed)} for arc length ``span`` (sign selects direction).

    Classical RK4 on the unit tangent (f_y, -f_x)/|grad f|, each step followed
    by Newton projection back onto the level set along grad f.  Leaving the
    domain raises :class:`DomainExitError` carrying the partial polyline.
    """
    f = web.f
    x, y = float(seed[0]), float(seed[1])
    web.check_point(x, y)
    level = f.value(x, y)
    tol = 1e-9 * max(1.0, abs(level))
    direction = 1.0 if span >= 0 else -1.0
    total = abs(span)

    def tangent(px, py):
        gx = f.partial((1, 0), (px, py))
        gy = f.partial((0, 1), (px, py))
        norm = math.hypot(gx, gy)
        if norm < web.reg_floor:
            raise RegularityError(f"|grad f| below floor at ({px}, {py})")
        return direction * gy / norm, -direction * gx / norm

    pts = [(x, y)]
    travelled = 0.0
    while travelled < total - 1e-15:
        h = min(step, total - travelled)
        try:
            k1 = tangent(x, y)
            k2 = tangent(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1])
            k3 = tangent(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1])
            k4 = tangent(x + h * k3[0], y + h * k3[1])
            nx = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            ny = y + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            if not web.domain.contains(nx, ny):
                raise DomainExitError("level curve left the domain", pts)
            for _ in range(4):
                r = f.value(nx, ny) - level
                if abs(r) <= tol * 1e-3:
                    break
                gx = f.partial((1, 0), (nx, ny))
                gy = f.partial((0, 1), (nx, ny))
                g2 = gx * gx + gy * gy
                nx, ny = nx - r * gx / g2, ny - r * gy / g2
            if not web.domain.contains(nx, ny):
                raise DomainExitError("level curve left the domain", pts)
        except DomainExitError:
            raise
        except (ArithmeticError, WebauditError) as err:
            if isinstance(err, RegularityError):
                raise
            raise DomainExitError(f"level curve left the domain: {err}", pts) from None
        if abs(f.value(nx, ny) - level) > tol:
            raise RegularityError("projection failed to return to the level set")
        x, y = nx, ny
        pts.append((x, y))
        travelled += h
    return pts


# ----------------------------------------------------------------------------
# additive representation


@dataclass
class AdditiveRepresentation:
    """Tabulated U1, U2 and phi with gauge U1(x*) = U2(y*) = 0, U1'(x*) = 1."""

    anchor: tuple
    x_grid: np.ndarray
    u1_table: np.ndarray
    y_grid: np.ndarray
    u2_table: np.ndarray
    f_grid: np.ndarray
    phi_table: np.ndarray
    _web: Web3 = dc_field(repr=False, default=None)
    _nodes: int = 12

    def _alpha(self, x):
        xs, ys = self.anchor
        return self._web.log_ratio(x, ys) - self._web.log_ratio(xs, ys)

    def _beta(self, y):
        return self._web.log_ratio(self.anchor[0], y)

    def u1_prime(self, x):
        return math.exp(self._alpha(x))

    def u2_prime(self, y):
        return self._web.ratio_sign * math.exp(-self._beta(y))

    def _integral(self, g, a, b):
        if a == b:
            return 0.0
        segments = max(1, int(math.ceil(abs(b - a) / 0.05)))
        return integrate(g, a, b, nodes=self._nodes, segments=segments)

    def u1(self, x):
        return self._integral(self.u1_prime, self.anchor[0], x)

    def u2(self, y):
        return self._integral(self.u2_prime, self.anchor[1], y)

    def phi(self, value):
        return float(np.interp(value, self.f_grid, self.phi_table))

    def total(self, x, y):
        return self.u1(x) + self.u2(y)


def _strictly_monotone(a):
    d = np.diff(np.asarray(a))
    return bool(np.all(d > 0) or np.all(d < 0))


def recover_additive(web, anchor=None, n=65, tol=1e-6, probes=5):
    """Additive representation for a trivial web.

    With L = ln(f_x/f_y) = alpha(x) + beta(y), alpha(x) = L(x, y*) - L(x*, y*)
    and beta(y) = L(x*, y), the pieces are U1 = int exp(alpha) and
    U2 = int exp(-beta) from the anchor; phi pairs f(x, y*) with U1(x).
    """
    report = separability_test(web, n=probes, tol=tol)
    if report.verdict != "trivial":
        raise PreconditionError(
            f"web is {report.verdict} (max |residual| {report.max_abs_residual:.3g} > tol {tol:.3g})"
        )
    d = web.domain
    if anchor is None:
        anchor = d.center
    xs_, ys_ = float(anchor[0]), float(anchor[1])
    web.check_point(xs_, ys_)
    rep = AdditiveRepresentation((xs_, ys_), None, None, None, None, None, None, _web=web)
    x_grid = np.linspace(d.xlo, d.xhi, n)
    y_grid = np.linspace(d.ylo, d.yhi, n)
    u1 = cumulative_integral(rep.u1_prime, x_grid, xs_, nodes=rep._nodes)
    u2 = cumulative_integral(rep.u2_prime, y_grid, ys_, nodes=rep._nodes)
    fvals = np.array([web.f.value(float(x), ys_) for x in x_grid])
    phi = u1 + rep.u2(ys_)
    order = np.argsort(fvals)
    rep.x_grid, rep.u1_table = x_grid, u1
    rep.y_grid, rep.u2_table = y_grid, u2
    rep.f_grid, rep.phi_table = fvals[order], phi[order]
    if not (_strictly_monotone(u1) and _strictly_monotone(u2) and _strictly_monotone(rep.phi_table)):
        raise PreconditionError("recovered tables are not strictly monotone")
    return rep


def level_curve_spread(rep, polyline):
    """max - min of U1(x) + U2(y) along a traced level curve."""
    vals = [rep.total(x, y) for x, y in polyline]
    return max(vals) - min(vals)
