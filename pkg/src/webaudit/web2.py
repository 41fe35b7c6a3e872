"""The constrained factor-demand 2-web and its integrability tests.

A demand web lives on the (p1, q1) plane.  Its two foliations are the level
sets of p2 (demand for factor 1 at a fixed price of factor 2) and of q2
(demand for factor 1 at a fixed quantity of factor 2); together they define
the induced map (q1, p1) -> (q2, p2).  The Jacobian density

    a(q1, p1) = det d(q2, p2)/d(q1, p1)

drives every test: the graph is Lagrangian iff a = -1, the area condition
holds iff ln|a| splits additively in q1 and p1.

Points on the web are passed as (p1, q1); fields derived from the web (the
density and its logarithm) use axes (q1, p1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from webaudit import expr as ex
from webaudit.errors import (
    MonotonicityError,
    NotBracketedError,
    PreconditionError,
    RegularityError,
    RootError,
    TransversalityError,
    WebauditError,
)
from webaudit.field import ClosedFormField, GridField, Rect, derive_grids
from webaudit.numerics import (
    STENCILS,
    cumulative_integral,
    expand_bracket,
    gauss_legendre,
    integrate,
    richardson,
    shoelace,
    solve_monotone,
)
from webaudit.web3 import Web3, thomsen_closure_gap, HexagonReport


@dataclass(frozen=True)
class InducedMapSample:
    p1: float
    q1: float
    p2: float
    q2: float
    jacobian: tuple  # ((dq2/dq1, dq2/dp1), (dp2/dq1, dp2/dp1))
    det: float

    @property
    def orientation_reversing(self):
        return self.det < 0


@dataclass(frozen=True)
class ImplicitVariable:
    """Coordinate ``name`` defined implicitly by q1 = relation(p1, name)."""

    name: str
    relation: ex.Expression
    bracket: tuple


class DemandWeb:
    """Common surface of closed-form and gridded demand webs."""

    kind = "abstract"
    symbolic = False

    def __init__(self, domain, floor=1e-6):
        self.domain = domain  # Rect over (p1, q1)
        self.floor = floor

    @property
    def density_domain(self):
        d = self.domain
        return Rect(d.ylo, d.yhi, d.xlo, d.xhi)

    def induced_map(self, p1, q1):
        raise NotImplementedError

    def density_field(self):
        """Signed density a as a field over (q1, p1)."""
        raise NotImplementedError

    def abs_density_field(self):
        raise NotImplementedError

    def log_density_field(self):
        raise NotImplementedError

    def check_point(self, p1, q1):
        if not self.domain.contains(p1, q1):
            raise RegularityError(f"point (p1={p1}, q1={q1}) outside the web domain")

    @property
    def density_sign(self):
        if not hasattr(self, "_sign"):
            p1, q1 = self.domain.center
            det = self.induced_map(p1, q1).det
            if det == 0.0:
                raise TransversalityError("density vanishes at the domain center")
            self._sign = 1.0 if det > 0 else -1.0
        return self._sign

    def probe_points(self, n, margin=0.1):
        return self.domain.inset(margin).probe_grid(n)


# ----------------------------------------------------------------------------
# closed-form webs


class ChartField(ClosedFormField):
    """Expression over a web's working variables seen as a field of (q1, p1).

    Partials apply the coordinate vector fields d/dq1 and d/dp1 of the web's
    chart, so implicitly defined coordinates are differentiated exactly.
    """

    def __init__(self, web, expression):
        self.web = web
        self.expression = ex.simplify(expression)
        self.names = ("q1", "p1")
        self.validity = web.density_domain
        self._derivs = {(0, 0): self.expression}
        self._compiled = {}

    @property
    def variables(self):
        return self.web.variables

    def d(self, e, axis):
        return ex.apply_vector_field(e, self.web.d_q1 if axis == 0 else self.web.d_p1)

    def bindings(self, x, y):
        return self.web.locate(y, x)


class SymbolicWeb(DemandWeb):
    """Closed-form web: q2 and p2 as expressions over working variables.

    Working variables are q1, p1 and any implicitly solved coordinates, each
    tied to the chart by q1 = relation(p1, s).
    """

    symbolic = True

    def __init__(self, q2, p2, domain, implicit=(), floor=1e-6, kind="map-web", source=None):
        super().__init__(domain, floor)
        self.q2 = ex.as_expr(q2)
        self.p2 = ex.as_expr(p2)
        self.implicit = tuple(implicit)
        self.kind = kind
        self.source = dict(source or {})
        self.variables = ("q1", "p1") + tuple(v.name for v in self.implicit)
        allowed = set(self.variables)
        for e in (self.q2, self.p2):
            extra = ex.free_variables(e) - allowed
            if extra:
                raise ValueError(f"web expression uses unknown variables {sorted(extra)}")
        self.d_q1 = {"q1": ex.ONE}
        self.d_p1 = {"p1": ex.ONE}
        self._solvers = []
        for v in self.implicit:
            extra = ex.free_variables(v.relation) - {"p1", v.name}
            if extra:
                raise ValueError(f"relation for {v.name} may only use p1 and {v.name}")
            if v.name not in ex.free_variables(v.relation):
                raise MonotonicityError(f"relation for {v.name} does not depend on {v.name}")
            g_s = ex.differentiate(v.relation, v.name)
            g_p = ex.differentiate(v.relation, "p1")
            self.d_q1[v.name] = ex.simplify(ex.make_binary("div", ex.ONE, g_s))
            self.d_p1[v.name] = ex.simplify(ex.make_unary("neg", ex.make_binary("div", g_p, g_s)))
            self._solvers.append(
                (v, ex.lambdify(v.relation, ("p1", v.name)), ex.lambdify(g_s, ("p1", v.name)))
            )
        self._jac_exprs = (
            ex.apply_vector_field(self.q2, self.d_q1),
            ex.apply_vector_field(self.q2, self.d_p1),
            ex.apply_vector_field(self.p2, self.d_q1),
            ex.apply_vector_field(self.p2, self.d_p1),
        )
        jq, jp, kq, kp = self._jac_exprs
        self.density_expr = ex.simplify(
            ex.make_binary("sub", ex.make_binary("mul", jq, kp), ex.make_binary("mul", jp, kq))
        )
        self._map_fn = ex.lambdify(self.q2, self.variables), ex.lambdify(self.p2, self.variables)
        self._jac_fn = tuple(ex.lambdify(e, self.variables) for e in self._jac_exprs)
        self.locate = lru_cache(maxsize=65536)(self._locate)
        self._fields = {}

    def __repr__(self):
        return f"SymbolicWeb(kind={self.kind!r}, q2={ex.unparse(self.q2)!r}, p2={ex.unparse(self.p2)!r})"

    def _locate(self, p1, q1):
        b = {"q1": q1, "p1": p1}
        for v, g, dg in self._solvers:
            gf = lambda s, g=g: g(p1, s)  # noqa: E731
            dgf = lambda s, dg=dg: dg(p1, s)  # noqa: E731
            lo, hi = v.bracket
            mid = 0.5 * (lo + hi)
            try:
                if dgf(mid) == 0.0 or gf(lo) == gf(hi):
                    raise MonotonicityError(f"relation for {v.name} does not depend on {v.name}")
            except ArithmeticError:
                pass
            try:
                lo, hi = expand_bracket(gf, q1, lo, hi)
            except NotBracketedError:
                raise NotBracketedError(f"cannot bracket {v.name} at (p1={p1}, q1={q1})") from None
            b[v.name] = solve_monotone(gf, q1, lo, hi, dg=dgf, coarse=1e-3 * (hi - lo), tol=1e-14)
        return b

    def _args(self, p1, q1):
        b = self.locate(float(p1), float(q1))
        return [b[n] for n in self.variables]

    def induced_map(self, p1, q1):
        args = self._args(p1, q1)
        q2 = self._map_fn[0](*args)
        p2 = self._map_fn[1](*args)
        jq, jp, kq, kp = (f(*args) for f in self._jac_fn)
        det = jq * kp - jp * kq
        return InducedMapSample(p1, q1, p2, q2, ((jq, jp), (kq, kp)), det)

    def expression_field(self, e):
        if e not in self._fields:
            self._fields[e] = ChartField(self, e)
        return self._fields[e]

    def density_field(self):
        return self.expression_field(self.density_expr)

    def abs_density_field(self):
        e = self.density_expr if self.density_sign > 0 else ex.make_unary("neg", self.density_expr)
        return self.expression_field(ex.simplify(e))

    def log_density_field(self):
        return self.expression_field(ex.make_unary("ln", self.abs_density_field().expression))

    def with_maps(self, q2=None, p2=None, kind=None, source=None):
        return SymbolicWeb(
            self.q2 if q2 is None else q2,
            self.p2 if p2 is None else p2,
            self.domain,
            self.implicit,
            self.floor,
            kind or self.kind,
            source if source is not None else self.source,
        )

    def graph_chart(self):
        """(chart names, {q1, p1, q2, p2: Expression}) parametrizing the graph, or None."""
        if not self.implicit:
            return ("q1", "p1"), {"q1": ex.Var("q1"), "p1": ex.Var("p1"), "q2": self.q2, "p2": self.p2}
        if len(self.implicit) == 1:
            v = self.implicit[0]
            sub = {"q1": v.relation}
            return ("p1", v.name), {
                "q1": v.relation,
                "p1": ex.Var("p1"),
                "q2": ex.substitute(self.q2, sub),
                "p2": ex.substitute(self.p2, sub),
            }
        return None


def map_web(q2, p2, domain, floor=1e-6, kind="map-web", source=None):
    """Web from an induced map given directly over (q1, p1).

    ``q2`` and ``p2`` are expressions (or text) in q1, p1, or two grid fields
    with axes (q1, p1) sharing one geometry.
    """
    if isinstance(q2, GridField) or isinstance(p2, GridField):
        return GridWeb(q2, p2, domain, floor)
    if isinstance(q2, ClosedFormField):
        q2 = q2.expression
    if isinstance(p2, ClosedFormField):
        p2 = p2.expression
    if isinstance(q2, str):
        q2 = ex.parse(q2, variables=("q1", "p1"))
    if isinstance(p2, str):
        p2 = ex.parse(p2, variables=("q1", "p1"))
    src = source or {"q2": ex.unparse(q2), "p2": ex.unparse(p2)}
    return SymbolicWeb(q2, p2, domain, floor=floor, kind=kind, source=src)


def family_web(f1, f2, domain, p2_bracket, q2_bracket, floor=1e-6):
    """Web from the two demand families q1 = f1(p1; p2) and q1 = f2(p1; q2)."""
    if isinstance(f1, str):
        f1 = ex.parse(f1, variables=("p1", "p2"))
    if isinstance(f2, str):
        f2 = ex.parse(f2, variables=("p1", "q2"))
    implicit = (
        ImplicitVariable("p2", f1, tuple(p2_bracket)),
        ImplicitVariable("q2", f2, tuple(q2_bracket)),
    )
    src = {"f1": ex.unparse(f1), "f2": ex.unparse(f2), "p2_bracket": list(p2_bracket),
           "q2_bracket": list(q2_bracket)}
    web = SymbolicWeb(ex.Var("q2"), ex.Var("p2"), domain, implicit, floor, kind="families", source=src)
    check_transversality(web)
    return web


# ----------------------------------------------------------------------------
# gridded webs


class GridWeb(DemandWeb):
    """Induced map sampled on a uniform (q1, p1) grid."""

    kind = "grid-map"

    def __init__(self, q2, p2, domain=None, floor=1e-6):
        if not (isinstance(q2, GridField) and isinstance(p2, GridField) and q2.same_geometry(p2)):
            raise ValueError("grid webs need two GridFields on the same grid")
        self.q2_field, self.p2_field = q2, p2
        self._density = derive_grids(
            lambda q2q, q2p, p2q, p2p: q2q * p2p - q2p * p2q,
            [(q2, (1, 0)), (q2, (0, 1)), (p2, (1, 0)), (p2, (0, 1))],
        )
        r = self._density.validity  # (q1, p1)
        inner = Rect(r.ylo, r.yhi, r.xlo, r.xhi)
        domain = inner if domain is None else domain.intersect(inner)
        super().__init__(domain, floor)
        self._abs = None
        self._log = None

    def induced_map(self, p1, q1):
        self.check_point(p1, q1)
        pt = (q1, p1)
        q2 = self.q2_field.value(q1, p1)
        p2 = self.p2_field.value(q1, p1)
        jq = self.q2_field.partial((1, 0), pt)
        jp = self.q2_field.partial((0, 1), pt)
        kq = self.p2_field.partial((1, 0), pt)
        kp = self.p2_field.partial((0, 1), pt)
        return InducedMapSample(p1, q1, p2, q2, ((jq, jp), (kq, kp)), jq * kp - jp * kq)

    def density_field(self):
        return self._density

    def abs_density_field(self):
        if self._abs is None:
            self._abs = self._density.derive(np.abs, [(0, 0)])
        return self._abs

    def log_density_field(self):
        if self._log is None:
            self._log = self._density.derive(lambda a: np.log(np.abs(a)), [(0, 0)])
        return self._log


# ----------------------------------------------------------------------------
# pointwise residuals


def induced_map(web, point):
    p1, q1 = point
    web.check_point(p1, q1)
    return web.induced_map(p1, q1)


def lagrangian_residual(web, point):
    """det d(q2, p2)/d(q1, p1) + 1; zero iff the graph is Lagrangian there."""
    return induced_map(web, point).det + 1.0


def jacobian_density(web, point):
    det = induced_map(web, point).det
    if det == 0.0:
        raise TransversalityError(f"density vanishes at {point}")
    return det


def samuelson_residual(web, point):
    """(d^2/dq1 dp1) ln|a| at ``point`` = (p1, q1)."""
    p1, q1 = point
    a = jacobian_density(web, point)
    if (a > 0) != (web.density_sign > 0):
        raise RegularityError(f"density changes sign near {point}")
    return web.log_density_field().partial((1, 1), (q1, p1))


def _density_partials(web, point):
    p1, q1 = point
    web.check_point(p1, q1)
    fa = web.density_field()
    pt = (q1, p1)
    return (
        fa.partial((0, 0), pt),
        fa.partial((1, 0), pt),
        fa.partial((0, 1), pt),
        fa.partial((1, 1), pt),
    )


def _rich_stencil(order):
    """1-D weights on half-step nodes -2..2 for Richardson-combined stencils of step h, h/2."""
    coarse = np.zeros(5)
    fine = np.zeros(5)
    c = STENCILS[order]
    r = len(c) // 2
    for k, w in enumerate(c):
        coarse[2 + 2 * (k - r)] += w
        fine[2 + (k - r)] += w * 2**order
    return (4.0 * fine - coarse) / 3.0


def reconstructed_s_derivatives(web, point, h=None, nodes=8):
    """S_qp, S_qqp, S_qpp, S_qqpp of S = double integral of a from ``point``.

    S is built by Gauss-Legendre quadrature of the density over a 4 x 4 block
    of cells of size h/2 around the point; derivatives use tensor-product
    Richardson stencils, which keep product densities exactly factorized.
    """
    p1, q1 = point
    web.check_point(p1, q1)
    d = web.domain
    if h is None:
        h = 0.02 * min(d.width, d.height)
    hq = hp = h
    fa = web.density_field()
    x, w = gauss_legendre(nodes)
    half = 0.5 * np.array([hq, hp]) / 2.0
    cells = np.zeros((4, 4))
    for i in range(4):
        qc = q1 + (i - 1.5) * hq / 2.0
        for j in range(4):
            pc = p1 + (j - 1.5) * hp / 2.0
            total = 0.0
            for xi, wi in zip(x, w):
                for xj, wj in zip(x, w):
                    total += wi * wj * fa.value(qc + half[0] * xi, pc + half[1] * xj)
            cells[i, j] = total * half[0] * half[1]
    S = np.zeros((5, 5))
    for a in range(5):
        ia = range(2, a) if a > 2 else range(a, 2)
        sa = 1.0 if a >= 2 else -1.0
        for b in range(5):
            jb = range(2, b) if b > 2 else range(b, 2)
            sb = 1.0 if b >= 2 else -1.0
            S[a, b] = sa * sb * sum(cells[i, j] for i in ia for j in jb)
    out = {}
    for order in ((1, 1), (2, 1), (1, 2), (2, 2)):
        wq = _rich_stencil(order[0]) / (hq ** order[0])
        wp = _rich_stencil(order[1]) / (hp ** order[1])
        out[order] = float(wq @ S @ wp)
    return out


def taylor_identity_residual(web, point, route="direct", h=None):
    """a * a_qp - a_q * a_p  (equivalently S_qp S_qqpp - S_qqp S_qpp).

    ``route="direct"`` differentiates the density; ``"reconstructed"`` works
    from S obtained by quadrature of a.
    """
    if route == "direct":
        a, aq, ap, aqp = _density_partials(web, point)
        return a * aqp - aq * ap
    if route == "reconstructed":
        s = reconstructed_s_derivatives(web, point, h)
        return s[(1, 1)] * s[(2, 2)] - s[(2, 1)] * s[(1, 2)]
    raise ValueError("route must be 'direct' or 'reconstructed'")


# ----------------------------------------------------------------------------
# areas


def _newton_2d(web, target, guess, max_iter=60):
    """(p1, q1) with (p2, q2) = target, damped Newton from ``guess``."""
    c, dd = target
    p1, q1 = guess
    s = web.induced_map(p1, q1)
    res = np.array([s.p2 - c, s.q2 - dd])
    scale = max(1.0, abs(c), abs(dd))
    for _ in range(max_iter):
        if np.max(np.abs(res)) <= 1e-14 * scale:
            return p1, q1
        (jq, jp), (kq, kp) = s.jacobian
        J = np.array([[kp, kq], [jp, jq]])  # d(p2, q2)/d(p1, q1)
        try:
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            raise RootError("singular Jacobian while locating a leaf intersection") from None
        lam = 1.0
        while lam > 1e-6:
            np1, nq1 = p1 + lam * step[0], q1 + lam * step[1]
            if web.domain.contains(np1, nq1):
                try:
                    ns = web.induced_map(np1, nq1)
                    nres = np.array([ns.p2 - c, ns.q2 - dd])
                    if np.max(np.abs(nres)) < np.max(np.abs(res)) or lam < 1e-3:
                        break
                except (ArithmeticError, WebauditError):
                    pass
            lam *= 0.5
        else:
            raise RootError(f"leaves p2={c}, q2={dd} do not intersect inside the domain")
        if abs(lam * step[0]) + abs(lam * step[1]) <= 1e-15 * scale:
            return np1, nq1
        p1, q1, s, res = np1, nq1, ns, nres
    if np.max(np.abs(res)) <= 1e-10 * scale:
        return p1, q1
    raise RootError(f"leaf intersection p2={c}, q2={dd} did not converge")


def _romberg(areas):
    return richardson(areas, ratio=2.0, order=2)


def quadrilateral_area(web, p2_leaves, q2_leaves, n=64, guess=None, levels=3):
    """Area in the (p1, q1) plane of the cell cut by two leaves of each family.

    ``p2_leaves`` are two values of p2 (first family), ``q2_leaves`` two values
    of q2 (second family).  Boundary arcs are traced by continuation with
    n, 2n, 4n points per arc and the shoelace areas Romberg-extrapolated.
    """
    c1, c2 = (float(v) for v in p2_leaves)
    d1, d2 = (float(v) for v in q2_leaves)
    if c1 == c2 or d1 == d2:
        raise ValueError("quadrilateral needs two distinct leaves of each family")
    if guess is None:
        guess = web.domain.center
    start = _newton_2d(web, (c1, d1), guess)

    def polyline(m):
        pts = []
        cur = start
        legs = [
            ((c1, c1), (d1, d2)),
            ((c1, c2), (d2, d2)),
            ((c2, c2), (d2, d1)),
            ((c2, c1), (d1, d1)),
        ]
        for (ca, cb), (da, db) in legs:
            for t in np.linspace(0.0, 1.0, m + 1)[:-1]:
                target = (ca + t * (cb - ca), da + t * (db - da))
                cur = _newton_2d(web, target, cur)
                pts.append(cur)
        return pts

    areas = []
    signs = set()
    for k in range(levels):
        a = shoelace(polyline(n * 2**k))
        signs.add(a > 0)
        areas.append(abs(a))
    if len(signs) != 1:
        raise RegularityError("cell boundary is self-intersecting")
    return _romberg(areas)


def image_cell_area(web, base, dq, dp, n=64, levels=3, cache=None):
    """Area in the (q2, p2) plane of the image of [q1, q1+dq] x [p1, p1+dp].

    Equivalently the double integral of |a| over the rectangle; this is the
    cell area A(dq, dp) of the area-ratio condition.
    """
    p1, q1 = base
    cache = {} if cache is None else cache

    def image(pp, qq):
        key = (pp, qq)
        if key not in cache:
            s = web.induced_map(pp, qq)
            cache[key] = (s.q2, s.p2)
        return cache[key]

    corners = [(q1, p1), (q1 + dq, p1), (q1 + dq, p1 + dp), (q1, p1 + dp)]
    areas = []
    for k in range(levels):
        m = n * 2**k
        pts = []
        for (qa, pa), (qb, pb) in zip(corners, corners[1:] + corners[:1]):
            for t in range(m):
                pts.append(image(pa + (pb - pa) * t / m, qa + (qb - qa) * t / m))
        areas.append(abs(shoelace(pts)))
    return _romberg(areas)


def area_ratio_check(web, base, eps, delta, n=64):
    """|A(e, d) A(-e, -d) / (A(e, -d) A(-e, d)) - 1| around ``base`` = (p1, q1).

    e displaces q1 and d displaces p1.
    """
    p1, q1 = base
    for sq in (-eps, eps):
        for sp in (-delta, delta):
            web.check_point(p1 + sp, q1 + sq)
    cache = {}
    A = {
        (sq, sp): image_cell_area(web, base, sq * eps, sp * delta, n, cache=cache)
        for sq in (1, -1)
        for sp in (1, -1)
    }
    return abs(A[(1, 1)] * A[(-1, -1)] / (A[(1, -1)] * A[(-1, 1)]) - 1.0)


# ----------------------------------------------------------------------------
# factorization and rectification


@dataclass
class Factorization:
    anchor: tuple  # (q1*, p1*)
    q_grid: np.ndarray
    f_table: np.ndarray
    p_grid: np.ndarray
    g_table: np.ndarray
    max_error: float
    web: DemandWeb = dc_field(repr=False, default=None)

    def f(self, q1):
        return abs(self.web.density_field().value(q1, self.anchor[1]))

    def g(self, p1):
        fa = self.web.density_field()
        qs, ps = self.anchor
        return abs(fa.value(qs, p1)) / abs(fa.value(qs, ps))


def samuelson_sweep(web, n=5, margin=0.1):
    out = []
    for p1, q1 in web.probe_points(n, margin):
        out.append(samuelson_residual(web, (p1, q1)))
    return out


def factor_density(web, anchor=None, n=33, tol=None, probes=5):
    """|a(q1, p1)| = f(q1) g(p1) with f = |a(., p1*)|, g = |a(q1*, .)| / |a(q1*, p1*)|."""
    if tol is None:
        tol = default_tolerances(web).samuelson
    worst = max(abs(r) for r in samuelson_sweep(web, probes))
    if worst > tol:
        raise PreconditionError(f"area condition fails: max |samuelson residual| {worst:.3g} > {tol:.3g}")
    dd = web.density_domain
    if anchor is None:
        anchor = dd.center
    qs, ps = float(anchor[0]), float(anchor[1])
    fa = web.density_field()
    a0 = fa.value(qs, ps)
    if a0 == 0.0:
        raise PreconditionError("density vanishes at the anchor")
    fac = Factorization((qs, ps), None, None, None, None, 0.0, web)
    q_grid = np.linspace(dd.xlo, dd.xhi, n)
    p_grid = np.linspace(dd.ylo, dd.yhi, n)
    fac.q_grid, fac.f_table = q_grid, np.array([fac.f(float(q)) for q in q_grid])
    fac.p_grid, fac.g_table = p_grid, np.array([fac.g(float(p)) for p in p_grid])
    err = 0.0
    amax = 0.0
    for iq in range(0, n, max(1, n // 8)):
        for ip in range(0, n, max(1, n // 8)):
            av = abs(fa.value(float(q_grid[iq]), float(p_grid[ip])))
            amax = max(amax, av)
            err = max(err, abs(fac.f_table[iq] * fac.g_table[ip] - av))
    fac.max_error = err / amax
    if fac.max_error > 1e-6:
        raise PreconditionError(f"density does not factor: relative error {fac.max_error:.3g}")
    return fac


@dataclass
class Rectification:
    anchor: tuple
    q_grid: np.ndarray
    F_table: np.ndarray
    p_grid: np.ndarray
    G_table: np.ndarray
    factorization: Factorization
    probes: list = dc_field(default_factory=list)
    rectified_abs_det: list = dc_field(default_factory=list)

    def F(self, q1):
        return integrate(self.factorization.f, self.anchor[0], q1, segments=max(1, int(abs(q1 - self.anchor[0]) / 0.05) + 1))

    def G(self, p1):
        return integrate(self.factorization.g, self.anchor[1], p1, segments=max(1, int(abs(p1 - self.anchor[1]) / 0.05) + 1))

    def rectified_det(self, q1, p1):
        """det d(q2, p2)/d(Q, P) with Q = F(q1), P = G(p1): a / (F' G')."""
        a = self.factorization.web.density_field().value(q1, p1)
        return a / (self.factorization.f(q1) * self.factorization.g(p1))

    @property
    def max_det_error(self):
        return max(abs(v - 1.0) for v in self.rectified_abs_det)


def rectify(web, anchor=None, n=65, probes=5, tol=None):
    """Coordinates Q = F(q1), P = G(p1), F' = f, G' = g, in which |a| = 1."""
    fac = factor_density(web, anchor, n=n, tol=tol)
    qs, ps = fac.anchor
    if np.any(fac.f_table <= 0) or np.any(fac.g_table <= 0):
        raise PreconditionError("factor tables must be positive for monotone F, G")
    F = cumulative_integral(fac.f, fac.q_grid, qs)
    G = cumulative_integral(fac.g, fac.p_grid, ps)
    rect = Rectification(fac.anchor, fac.q_grid, F, fac.p_grid, G, fac)
    for p1, q1 in web.probe_points(probes):
        rect.probes.append((p1, q1))
        rect.rectified_abs_det.append(abs(rect.rectified_det(q1, p1)))
    return rect


# ----------------------------------------------------------------------------
# hexagon on the density web


def density_varies(web, floor=None, sweep=9):
    """(varies in q1, varies in p1) judged by |a_q|, |a_p| against floor * max|a|.

    The default floor is 1e-9 for closed-form webs and 1e-4 for grids, whose
    differentiated density carries stencil noise.
    """
    if floor is None:
        floor = 1e-9 if web.symbolic else 1e-4
    fa = web.abs_density_field()
    dd = web.density_domain
    if isinstance(fa, GridField):
        dd = dd.intersect(fa.region((1, 0))).intersect(fa.region((0, 1)))
    amax = gq = gp = 0.0
    for x, y in dd.probe_grid(sweep):
        amax = max(amax, abs(fa.value(x, y)))
        gq = max(gq, abs(fa.partial((1, 0), (x, y))))
        gp = max(gp, abs(fa.partial((0, 1), (x, y))))
    return gq > floor * amax, gp > floor * amax


def hexagon_on_density(web, quadruple, floor=None):
    """Thomsen gap of the 3-web (verticals, horizontals, level curves of |a|).

    ``quadruple`` is (q1_0, p1_0, q1_1, q1_2).  A density that is constant (or
    depends on one coordinate only) is trivially log-separable and recorded as
    a vacuous pass.
    """
    x0, y0, x1, x2 = quadruple
    vq, vp = density_varies(web, floor)
    if not (vq and vp):
        what = "constant" if not (vq or vp) else "single-variable"
        return HexagonReport(x0, y0, x1, x2, y0, y0, y0, 0.0, {}, vacuous=True, note=f"{what} density")
    fa = web.abs_density_field()
    domain = web.density_domain if not isinstance(fa, GridField) else None
    w3 = Web3(fa, domain)
    return thomsen_closure_gap(w3, x0, y0, x1, x2)


# ----------------------------------------------------------------------------
# audit


def _hexagon_family_member(web, dd, k, tries=4):
    """k-th audit quadruple; the x offsets halve until every solve stays inside."""
    x0 = dd.xlo + 0.4 * dd.width
    y0 = dd.ylo + (0.35 + 0.15 * k) * dd.height
    step = 0.1 * dd.width
    err = None
    for _ in range(tries):
        try:
            return hexagon_on_density(web, (x0, y0, x0 + step, x0 + 2 * step)), None
        except (ArithmeticError, WebauditError) as e:
            err = str(e)
            step *= 0.5
    return None, err


@dataclass(frozen=True)
class Tolerances:
    lagrangian: float = 1e-6
    samuelson: float = 1e-6
    taylor: float = 1e-6
    area_ratio: float = 1e-5
    hexagon: float = 1e-7  # relative to the domain height

    def as_dict(self):
        return {
            "lagrangian": self.lagrangian,
            "samuelson": self.samuelson,
            "taylor": self.taylor,
            "area_ratio": self.area_ratio,
            "hexagon": self.hexagon,
        }


TOLERANCE_SETS = {
    "default": Tolerances(),
    "grid": Tolerances(lagrangian=1e-4, samuelson=1e-3, taylor=1e-3, area_ratio=1e-4, hexagon=1e-5),
    "strict": Tolerances(lagrangian=1e-8, samuelson=1e-8, taylor=1e-8, area_ratio=1e-6, hexagon=1e-7),
}


def default_tolerances(web):
    return TOLERANCE_SETS["default" if web.symbolic else "grid"]


def parse_tolerances(spec, web=None):
    """Named set or 'key=value,...' overrides on top of the web's default set."""
    if spec is None or spec == "auto":
        return default_tolerances(web) if web is not None else TOLERANCE_SETS["default"]
    if spec in TOLERANCE_SETS:
        return TOLERANCE_SETS[spec]
    base = default_tolerances(web).as_dict() if web is not None else Tolerances().as_dict()
    for item in spec.split(","):
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in base:
            raise ValueError(f"unknown tolerance {key!r}")
        base[key] = float(val)
    return Tolerances(**base)


@dataclass
class IntegrabilityReport:
    probes: list
    lagrangian: list
    samuelson: list
    taylor: list
    area_cells: list  # [(base, eps, delta)]
    area_ratio: list
    hexagon: list  # HexagonReport | None
    tolerances: Tolerances
    verdicts: dict
    failures: dict
    inconsistencies: list
    orientation_reversing: bool

    def family(self, name):
        return getattr(self, name)


def _max_abs(values):
    vals = [abs(v) for v in values if v is not None]
    return max(vals) if vals else float("nan")


def audit(web, tolerances=None, n=5, cells=3, eps=None, delta=None, hexagons=3):
    """All integrability tests on one web.

    Residual families run on an n x n probe grid; the area ratio on a
    cells x cells family of base points; the hexagon on a short family of
    quadruples.  Verdicts follow the hierarchy Lagrangian => area condition
    => area ratio => hexagon, and any violation of that order is flagged.
    """
    tol = tolerances or default_tolerances(web)
    probes = web.probe_points(n)
    fams = {"lagrangian": [], "samuelson": [], "taylor": []}
    failures = {}
    orient = True
    for k, (p1, q1) in enumerate(probes):
        for name, fn in (
            ("lagrangian", lagrangian_residual),
            ("samuelson", samuelson_residual),
            ("taylor", taylor_identity_residual),
        ):
            try:
                v = fn(web, (p1, q1))
            except (ArithmeticError, WebauditError) as err:
                failures.setdefault(name, {})[k] = str(err)
                v = None
            fams[name].append(v)
        try:
            orient = orient and induced_map(web, (p1, q1)).det < 0
        except (ArithmeticError, WebauditError):
            pass

    d = web.domain
    eps = eps if eps is not None else 0.1 * d.height  # along q1
    delta = delta if delta is not None else 0.1 * d.width  # along p1
    bases = d.inset(0.25).probe_grid(cells)
    ratios = []
    for k, base in enumerate(bases):
        try:
            ratios.append(area_ratio_check(web, base, eps, delta))
        except (ArithmeticError, WebauditError) as err:
            failures.setdefault("area_ratio", {})[k] = str(err)
            ratios.append(None)

    dd = web.density_domain
    hexes = []
    gaps = []
    for k in range(hexagons):
        h, err = _hexagon_family_member(web, dd, k)
        hexes.append(h)
        gaps.append(None if h is None else h.gap)
        if err is not None:
            failures.setdefault("hexagon", {})[k] = err

    def verdict(values, t, fam):
        if fam in failures and len(failures[fam]) > 0.1 * len(values):
            return {"pass": None, "max": _max_abs(values), "tolerance": t, "status": "inconclusive"}
        m = _max_abs(values)
        ok = bool(m <= t)
        return {"pass": ok, "max": m, "tolerance": t, "status": "pass" if ok else "fail"}

    verdicts = {
        "lagrangian": verdict(fams["lagrangian"], tol.lagrangian, "lagrangian"),
        "samuelson": verdict(fams["samuelson"], tol.samuelson, "samuelson"),
        "taylor": verdict(fams["taylor"], tol.taylor, "taylor"),
        "area_ratio": verdict(ratios, tol.area_ratio, "area_ratio"),
        "hexagon": verdict(gaps, tol.hexagon * dd.height, "hexagon"),
    }
    verdicts["hexagon"]["vacuous"] = bool(hexes) and all(h is not None and h.vacuous for h in hexes)
    order = ["lagrangian", "samuelson", "area_ratio", "hexagon"]
    inconsistent = []
    for stronger, weaker in zip(order, order[1:]):
        if verdicts[stronger]["pass"] is True and verdicts[weaker]["pass"] is False:
            inconsistent.append(f"{stronger} passes but {weaker} fails")
    return IntegrabilityReport(
        probes, fams["lagrangian"], fams["samuelson"], fams["taylor"],
        [(b, eps, delta) for b in bases], ratios, hexes, tol, verdicts, failures, inconsistent, orient,
    )


def check_transversality(web, n=9):
    """Sweep the domain: the two leaf directions must stay apart by ``web.floor``
    (|sin angle|) and the density must keep one sign."""
    signs = set()
    for p1, q1 in web.domain.probe_grid(n):
        try:
            s = web.induced_map(p1, q1)
        except MonotonicityError:
            raise
        except (ArithmeticError, RootError) as err:
            raise TransversalityError(f"induced map unavailable at (p1={p1:.6g}, q1={q1:.6g}): {err}") from None
        (jq, jp), (kq, kp) = s.jacobian
        n1 = math.hypot(kq, kp)
        n2 = math.hypot(jq, jp)
        if n1 == 0.0 or n2 == 0.0:
            raise TransversalityError(f"a foliation is singular at (p1={p1:.6g}, q1={q1:.6g})")
        sin = abs(s.det) / (n1 * n2)
        if sin < web.floor:
            raise TransversalityError(f"leaves are tangent at (p1={p1:.6g}, q1={q1:.6g})")
        signs.add(s.det > 0)
    if len(signs) > 1:
        raise TransversalityError("the density changes sign inside the domain")
    return True
