"""Exterior calculus with expression coefficients.

A k-form is stored as a map from strictly increasing index tuples into the
coordinate list to coefficient expressions; the sign of any permutation is
folded into the coefficient so the representation is unique.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from webaudit import expr as ex
from webaudit.errors import PreconditionError, WebauditError

CONTACT_COORDS = ("Pi", "q1", "p1", "q2", "p2")


class FormError(WebauditError, ValueError):
    pass


@dataclass(frozen=True)
class CoordinateSystem:
    names: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise FormError(f"coordinate names must be unique: {self.names}")

    @property
    def dim(self):
        return len(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise FormError(f"{name!r} is not a coordinate of {self.names}") from None

    def d(self, name):
        """The basic 1-form d(name)."""
        return DifferentialForm(self, 1, {(self.index(name),): ex.ONE})

    def basis(self, *names):
        """d(n1) ^ d(n2) ^ ... in the given order."""
        out = self.scalar(ex.ONE)
        for n in names:
            out = wedge(out, self.d(n))
        return out

    def scalar(self, e):
        return DifferentialForm(self, 0, {(): ex.as_expr(e)})

    def zero(self, degree):
        return DifferentialForm(self, degree, {})


def _sort_sign(indices):
    """(sorted tuple, permutation sign) or (None, 0) on a repeated index."""
    if len(set(indices)) != len(indices):
        return None, 0
    idx = list(indices)
    sign = 1
    for i in range(len(idx)):
        for j in range(len(idx) - 1 - i):
            if idx[j] > idx[j + 1]:
                idx[j], idx[j + 1] = idx[j + 1], idx[j]
                sign = -sign
    return tuple(idx), sign


class DifferentialForm:
    """Homogeneous k-form over a :class:`CoordinateSystem`."""

    __slots__ = ("coords", "degree", "terms")

    def __init__(self, coords, degree, terms):
        self.coords = coords
        self.degree = degree
        clean = {}
        for idx, c in terms.items():
            idx = tuple(idx)
            if len(idx) != degree or any(b <= a for a, b in zip(idx, idx[1:])):
                raise FormError(f"index tuple {idx} is not strictly increasing of length {degree}")
            if any(i < 0 or i >= coords.dim for i in idx):
                raise FormError(f"index tuple {idx} out of range")
            c = ex.simplify(ex.as_expr(c))
            if not ex.is_const(c, 0.0):
                clean[idx] = c
        self.terms = dict(sorted(clean.items()))

    def __repr__(self):
        if not self.terms:
            return f"0 ({self.degree}-form)"
        parts = []
        for idx, c in self.terms.items():
            basis = "^".join("d" + self.coords.names[i] for i in idx)
            parts.append(f"({ex.unparse(c)}) {basis}".strip())
        return " + ".join(parts)

    def _check(self, other):
        if not isinstance(other, DifferentialForm):
            raise TypeError("expected a DifferentialForm")
        if other.coords != self.coords:
            raise FormError("forms live on different coordinate systems")

    def __add__(self, other):
        self._check(other)
        if other.degree != self.degree:
            raise FormError("cannot add forms of different degree")
        terms = dict(self.terms)
        for idx, c in other.terms.items():
            terms[idx] = ex.make_binary("add", terms[idx], c) if idx in terms else c
        return DifferentialForm(self.coords, self.degree, terms)

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, factor):
        f = ex.as_expr(factor)
        return DifferentialForm(
            self.coords, self.degree, {i: ex.make_binary("mul", f, c) for i, c in self.terms.items()}
        )

    def __xor__(self, other):
        return wedge(self, other)

    def coefficient(self, *names):
        """Coefficient of d(n1)^...^d(nk), sign-adjusted for the given order."""
        idx, sign = _sort_sign([self.coords.index(n) for n in names])
        if idx is None or len(idx) != self.degree:
            return ex.ZERO
        c = self.terms.get(idx, ex.ZERO)
        return c if sign > 0 else ex.simplify(ex.make_unary("neg", c))

    @property
    def is_structurally_zero(self):
        return not self.terms


def wedge(alpha, beta):
    alpha._check(beta)
    terms = {}
    for ia, ca in alpha.terms.items():
        for ib, cb in beta.terms.items():
            idx, sign = _sort_sign(ia + ib)
            if idx is None:
                continue
            c = ex.make_binary("mul", ca, cb)
            if sign < 0:
                c = ex.make_unary("neg", c)
            terms[idx] = ex.make_binary("add", terms[idx], c) if idx in terms else c
    return DifferentialForm(alpha.coords, alpha.degree + beta.degree, terms)


def exterior_derivative(alpha):
    names = alpha.coords.names
    terms = {}
    for idx, c in alpha.terms.items():
        for v in ex.free_variables(c):
            if v not in names:
                continue
            k = names.index(v)
            new, sign = _sort_sign((k,) + idx)
            if new is None:
                continue
            dc = ex.differentiate(c, v)
            if sign < 0:
                dc = ex.make_unary("neg", dc)
            terms[new] = ex.make_binary("add", terms[new], dc) if new in terms else dc
    return DifferentialForm(alpha.coords, alpha.degree + 1, terms)


def pullback(alpha, mapping, base):
    """Pull ``alpha`` back along coordinates given as expressions over ``base``.

    ``mapping`` must supply an expression for every coordinate of alpha's
    system; ``base`` is the source :class:`CoordinateSystem`.
    """
    missing = [n for n in alpha.coords.names if n not in mapping]
    if missing:
        raise FormError(f"pullback map lacks expressions for {missing}")
    exprs = {n: ex.as_expr(mapping[n]) for n in alpha.coords.names}
    dpulled = {}
    for n, e in exprs.items():
        terms = {}
        for v in ex.free_variables(e):
            if v in base.names:
                terms[(base.index(v),)] = ex.differentiate(e, v)
        dpulled[n] = DifferentialForm(base, 1, terms)
    out = base.zero(alpha.degree)
    for idx, c in alpha.terms.items():
        term = base.scalar(ex.substitute(c, exprs))
        for i in idx:
            term = wedge(term, dpulled[alpha.coords.names[i]])
        out = out + term
    return out


def evaluate_form(alpha, point):
    """{index tuple: value} at a binding of the coordinates."""
    return {idx: ex.evaluate(c, point) for idx, c in alpha.terms.items()}


def forms_equal(alpha, beta, points=50, tol=1e-10, seed=0, box=(0.5, 2.0)):
    """Probabilistic equality: the difference vanishes at random points.

    Coefficients of alpha - beta are evaluated at ``points`` uniform samples of
    ``box`` in every coordinate; the test passes when every value is within
    ``tol`` relative to the size of the compared coefficients.
    """
    if alpha.degree != beta.degree:
        return False
    return max_form_difference(alpha, beta, points, seed, box) <= tol


def max_form_difference(alpha, beta, points=50, seed=0, box=(0.5, 2.0)):
    alpha._check(beta)
    names = alpha.coords.names
    rng = np.random.default_rng(seed)
    keys = sorted(set(alpha.terms) | set(beta.terms))
    fa = {k: ex.lambdify(alpha.terms.get(k, ex.ZERO), names) for k in keys}
    fb = {k: ex.lambdify(beta.terms.get(k, ex.ZERO), names) for k in keys}
    worst = 0.0
    for _ in range(points):
        x = rng.uniform(box[0], box[1], size=len(names))
        for k in keys:
            va, vb = fa[k](*x), fb[k](*x)
            worst = max(worst, abs(va - vb) / max(1.0, abs(va), abs(vb)))
    return worst


def is_zero_form(alpha, points=50, tol=1e-10, seed=0, box=(0.5, 2.0)):
    return forms_equal(alpha, alpha.coords.zero(alpha.degree), points, tol, seed, box)


# ----------------------------------------------------------------------------
# the contact chain on (Pi, q1, p1, q2, p2)


def contact_form(coords=None):
    """omega = dPi + q1 dp1 + q2 dp2."""
    c = coords or CoordinateSystem(CONTACT_COORDS)
    q1, q2 = ex.Var("q1"), ex.Var("q2")
    return c.d("Pi") + c.d("p1").scale(q1) + c.d("p2").scale(q2)


@dataclass
class IdentityCheck:
    name: str
    computed: str
    expected: str
    max_difference: float
    holds: bool
    note: str = ""


def verify_contact_chain(points=50, tol=1e-10, seed=0):
    """Check the displayed identities for omega = dPi + q1 dp1 + q2 dp2."""
    c = CoordinateSystem(CONTACT_COORDS)
    omega = contact_form(c)
    domega = exterior_derivative(omega)
    checks = []

    def record(name, computed, expected, note=""):
        diff = max_form_difference(computed, expected, points, seed) if computed.degree == expected.degree else float("inf")
        checks.append(IdentityCheck(name, repr(computed), repr(expected), diff, diff <= tol, note))

    record("d omega = dq1^dp1 + dq2^dp2", domega, c.basis("q1", "p1") + c.basis("q2", "p2"))
    dd = wedge(domega, domega)
    record("d omega ^ d omega = 2 dq1^dp1^dq2^dp2", dd, c.basis("q1", "p1", "q2", "p2").scale(2.0))
    top = wedge(omega, dd)
    record(
        "omega ^ d omega ^ d omega = 2 dPi^dq1^dp1^dq2^dp2",
        top,
        c.basis("Pi", "q1", "p1", "q2", "p2").scale(2.0),
        "nonzero top form",
    )
    literal = wedge(dd, domega)
    record(
        "d omega ^ d omega ^ d omega = 0",
        literal,
        c.zero(6),
        "a 6-form on a 5-dimensional space; the nonvanishing identity is the omega ^ d omega ^ d omega line",
    )
    record("omega ^ omega = 0", wedge(omega, omega), c.zero(2))
    record("d d omega = 0", exterior_derivative(domega), c.zero(3))
    return checks


# ----------------------------------------------------------------------------
# Lagrangian coefficient of a demand-web graph


def graph_lagrangian_expression(web):
    """Pullback of d omega to the graph, as a coefficient of dq1^dp1.

    Returns (expression over the web's working variables, chart names).  On
    a chart (u, v) the pulled-back 2-form c du^dv is divided by the pullback
    coefficient of dq1^dp1, which gives the density in (q1, p1) terms.
    """
    chart = web.graph_chart() if hasattr(web, "graph_chart") else None
    if chart is None:
        raise PreconditionError("the forms route needs a closed-form graph chart")
    names, mapping = chart
    target = CoordinateSystem(("q1", "p1", "q2", "p2"))
    base = CoordinateSystem(names)
    domega = target.basis("q1", "p1") + target.basis("q2", "p2")
    pulled = pullback(domega, mapping, base)
    area = pullback(target.basis("q1", "p1"), mapping, base)
    num = pulled.coefficient(*names)
    den = area.coefficient(*names)
    return ex.simplify(ex.make_binary("div", num, den)), names


def graph_lagrangian_coefficient(web, point):
    """det + 1 at ``point`` = (p1, q1) computed through forms."""
    e, names = graph_lagrangian_expression(web)
    p1, q1 = point
    b = web.locate(float(p1), float(q1))
    return ex.evaluate(e, {n: b[n] for n in names})


def random_form(coords, degree, rng, max_terms=3, poly_degree=2):
    """Random form with polynomial coefficients, for property tests."""
    combos = list(itertools.combinations(range(coords.dim), degree))
    k = int(rng.integers(1, min(max_terms, len(combos)) + 1))
    chosen = rng.choice(len(combos), size=k, replace=False)
    terms = {}
    for ci in chosen:
        terms[combos[int(ci)]] = _random_poly(coords.names, rng, poly_degree)
    return DifferentialForm(coords, degree, terms)


def _random_poly(names, rng, degree):
    e = ex.Const(round(float(rng.uniform(-2, 2)), 3))
    for _ in range(int(rng.integers(1, 4))):
        mono = ex.Const(round(float(rng.uniform(-2, 2)), 3))
        for _ in range(int(rng.integers(1, degree + 1))):
            mono = ex.make_binary("mul", mono, ex.Var(names[int(rng.integers(len(names)))]))
        e = ex.make_binary("add", e, mono)
    return e
