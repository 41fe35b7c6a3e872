import math

import numpy as np
import pytest

from webaudit import expr as ex
from webaudit.errors import DomainExitError, PreconditionError, RegularityError, RootError
from webaudit.field import ClosedFormField, Rect, sample_to_grid
from webaudit.scenarios import random_separable
from webaudit.web3 import (
    Web3,
    chern_curvature,
    level_curve_spread,
    recover_additive,
    saint_robert_residual,
    separability_test,
    thomsen_closure_gap,
    trace_level_curve,
)

UNIT = Rect(0.5, 1.5, 0.5, 1.5)
SQUARE12 = Rect(1.0, 2.0, 1.0, 2.0)
NONSEP = "x+y+x^2*y"


def web(expr, rect=UNIT):
    return Web3(ClosedFormField(expr), rect)


# ---------------------------------------------------------------- curvature


@pytest.mark.parametrize("point", [(0.7, 0.9), (1.0, 1.0), (1.3, 0.6)])
def test_curvature_sum_zero(point):
    assert chern_curvature(web("x+y"), point) == 0.0


def test_curvature_product_zero():
    assert chern_curvature(web("x*y"), (1.0, 1.0)) == pytest.approx(0.0, abs=1e-14)


def test_curvature_nonseparable_value():
    assert chern_curvature(web(NONSEP), (1.0, 1.0)) == pytest.approx(-1.0 / 27.0, abs=1e-12)


def test_saint_robert_examples():
    assert saint_robert_residual(web("x+y"), (1.0, 1.0)) == 0.0
    assert saint_robert_residual(web("exp(x+y)"), (1.0, 1.0)) == pytest.approx(0.0, abs=1e-12)
    assert saint_robert_residual(web(NONSEP), (1.0, 1.0)) == pytest.approx(2.0 / 9.0, abs=1e-12)


@pytest.mark.parametrize("expr", [NONSEP, "x*y", "exp(x)*y+x", "x*y+y^2/(1+x)"])
def test_curvature_two_routes_agree(expr):
    w = web(expr)
    for p in UNIT.inset(0.2).probe_grid(3):
        sym = chern_curvature(w, p, route="symbolic")
        num = chern_curvature(w, p, route="numeric")
        assert abs(sym - num) <= 1e-5 * max(1.0, abs(sym))


def test_grid_route_matches_symbolic():
    f = ClosedFormField(NONSEP)
    wg = Web3(sample_to_grid(f, UNIT, 65))
    ws = web(NONSEP)
    for p in Rect(0.7, 1.3, 0.7, 1.3).probe_grid(3):
        assert saint_robert_residual(wg, p) == pytest.approx(saint_robert_residual(ws, p), rel=1e-3)


def test_regularity_floor_violation():
    with pytest.raises(RegularityError):
        web("x^2+y", Rect(-0.5, 0.5, 0.5, 1.5))


def test_separability_product_trivial():
    rep = separability_test(web("x*y", SQUARE12), n=5, tol=1e-8)
    assert rep.verdict == "trivial"
    assert rep.max_abs_residual <= 1e-8


def test_separability_nonseparable_detected():
    rep = separability_test(web(NONSEP), n=5, tol=1e-8)
    assert rep.verdict == "non-trivial"
    assert rep.max_abs_curvature >= 1.0 / 27.0
    assert len(rep.curvature) == len(rep.residuals) == 25


def test_separability_sum_exact_zero():
    rep = separability_test(web("x+y"), n=5, tol=0.0)
    assert rep.verdict == "trivial"
    assert rep.max_abs_residual == 0.0
    assert rep.route == "symbolic"


def test_separability_needs_three_probes():
    with pytest.raises(ValueError):
        separability_test(web("x+y"), n=2)


def test_separability_inconclusive_when_probes_fail():
    # gradients fail on the right half of the domain once the web is built
    class Flaky(ClosedFormField):
        armed = False

        def partial(self, order, point, cfg=None):
            if self.armed and point[0] > 1.0:
                raise ArithmeticError("synthetic failure")
            return super().partial(order, point, cfg)

    f = Flaky("x*y")
    w = Web3(f, UNIT)
    f.armed = True
    rep = separability_test(w, n=5, tol=1e-8)
    assert rep.verdict == "inconclusive"
    assert len(rep.failures) == 10
    assert all(rep.residuals[k] is None for k in rep.failures)


# ---------------------------------------------------------------- relabeling

RELABELS = ["t", "exp(t)", "t^3+t"]


def relabeled(expr, phi):
    f = ex.parse(expr, variables=("x", "y"))
    return ex.substitute(ex.parse(phi, variables=("t",)), {"t": f})


@pytest.mark.parametrize("phi", RELABELS)
@pytest.mark.parametrize("expr", [NONSEP, "x*y", "exp(x)*y+x"])
def test_relabeling_invariance(expr, phi):
    base = web(expr)
    w = Web3(ClosedFormField(relabeled(expr, phi)), UNIT)
    dphi = ex.lambdify(ex.differentiate(ex.parse(phi, variables=("t",)), "t"), ("t",))
    for p in UNIT.inset(0.2).probe_grid(3):
        assert saint_robert_residual(w, p) == pytest.approx(saint_robert_residual(base, p), abs=1e-9)
        k_base = chern_curvature(base, p)
        k_new = chern_curvature(w, p)
        scale = dphi(base.f.value(*p)) ** 2
        assert k_new * scale == pytest.approx(k_base, rel=1e-9, abs=1e-12)
        assert (abs(k_new) <= 1e-12) == (abs(k_base) <= 1e-12)
    g0 = thomsen_closure_gap(base, 0.8, 0.8, 0.85, 0.9, polylines=False).gap
    g1 = thomsen_closure_gap(w, 0.8, 0.8, 0.85, 0.9, polylines=False).gap
    assert g1 == pytest.approx(g0, abs=1e-9)


# ---------------------------------------------------------------- hexagon


def test_hexagon_sum_exact():
    w = web("x+y", Rect(-0.5, 1.0, -0.5, 1.0))
    rep = thomsen_closure_gap(w, 0.0, 0.0, 0.1, 0.2)
    assert rep.y1 == pytest.approx(0.1, abs=1e-13)
    assert rep.y2 == pytest.approx(0.2, abs=1e-13)
    assert rep.y2_closing == pytest.approx(0.2, abs=1e-13)
    assert rep.gap == pytest.approx(0.0, abs=1e-13)


def test_hexagon_product_closes():
    rep = thomsen_closure_gap(web("x*y", SQUARE12), 1.0, 1.0, 1.1, 1.2)
    assert abs(rep.gap) <= 1e-10


def test_hexagon_nonseparable_open():
    rep = thomsen_closure_gap(web(NONSEP), 1.0, 1.0, 1.1, 1.2)
    assert abs(rep.gap) > 1e-5


def test_hexagon_nonseparable_against_closed_form_levels():
    # level curves of x + y + x^2 y are y = (c - x) / (1 + x^2)
    def y_on(c, x):
        return (c - x) / (1 + x * x)

    def f(x, y):
        return x + y + x * x * y

    x0, y0, x1, x2 = 1.0, 1.0, 1.1, 1.2
    y1 = y_on(f(x1, y0), x0)
    y2 = y_on(f(x2, y1), x1)
    y2c = y_on(f(x2, y0), x0)
    rep = thomsen_closure_gap(web(NONSEP), x0, y0, x1, x2)
    assert rep.y1 == pytest.approx(y1, abs=1e-12)
    assert rep.y2 == pytest.approx(y2, abs=1e-12)
    assert rep.gap == pytest.approx(y2c - y2, abs=1e-12)


def test_hexagon_ordinates_inside_domain():
    w = web(NONSEP)
    rep = thomsen_closure_gap(w, 0.8, 0.8, 0.9, 1.0)
    for y in (rep.y1, rep.y2, rep.y2_closing):
        assert w.domain.contains(0.8, y)
    assert set(rep.polylines) >= {"level_1", "level_2", "level_3", "defect"}


def test_hexagon_unbracketed_root():
    with pytest.raises(RootError):
        thomsen_closure_gap(web(NONSEP), 0.8, 0.8, 1.1, 1.4)


def test_hexagon_needs_distinct_abscissae():
    with pytest.raises(ValueError):
        thomsen_closure_gap(web("x+y"), 1.0, 1.0, 1.0, 1.2)


@pytest.mark.parametrize("expr", ["x*y", "x+y", "exp(x)+y^3", "x^2*exp(y)"])
def test_flat_implies_closure(expr):
    w = web(expr)
    assert separability_test(w, n=5, tol=1e-8).verdict == "trivial"
    limit = 1e-7 * w.domain.height
    for x0 in np.linspace(0.6, 0.9, 5):
        for y0 in np.linspace(0.6, 0.9, 5):
            rep = thomsen_closure_gap(w, float(x0), float(y0), float(x0) + 0.05, float(x0) + 0.1, polylines=False)
            assert abs(rep.gap) <= limit


@pytest.mark.parametrize("expr", [NONSEP, "exp(x)*y+x", "x*y+y^2/(1+x)", "x*y"])
def test_gap_vanishes_with_scale(expr):
    w = web(expr)
    eps = [0.1 / 2**k for k in range(5)]
    gaps = [abs(thomsen_closure_gap(w, 0.8, 0.8, 0.8 + e, 0.8 + 2 * e, polylines=False).gap) for e in eps]
    for big, small in zip(gaps, gaps[1:]):
        if big <= 1e-12:  # already closed at round-off level
            assert small <= 1e-12
        else:
            assert big / small >= 4.0


# ---------------------------------------------------------------- tracing


def test_trace_sum_straight():
    w = web("x+y", Rect(0.0, 1.0, 0.0, 1.0))
    pts = trace_level_curve(w, (0.5, 0.5), 0.4, step=0.05)
    for x, y in pts:
        assert x + y == pytest.approx(1.0, abs=1e-12)
    (xa, ya), (xb, yb) = pts[0], pts[-1]
    assert (yb - ya) / (xb - xa) == pytest.approx(-1.0, abs=1e-12)
    assert math.hypot(xb - xa, yb - ya) == pytest.approx(0.4, abs=1e-12)


def test_trace_product_on_hyperbola():
    w = web("x*y", Rect(0.5, 2.0, 0.5, 2.0))
    pts = trace_level_curve(w, (1.0, 1.0), 0.5, step=0.02)
    assert len(pts) > 10
    assert max(abs(x * y - 1.0) for x, y in pts) <= 1e-9


def test_trace_domain_exit_keeps_partial():
    w = web("x+y", Rect(0.0, 1.0, 0.0, 1.0))
    with pytest.raises(DomainExitError) as info:
        trace_level_curve(w, (0.0, 0.0), 10.0, step=0.05)
    assert isinstance(info.value.polyline, list)
    assert info.value.polyline[0] == (0.0, 0.0)


# ---------------------------------------------------------------- recovery


def test_recover_sum_identity():
    w = web("x+y", Rect(-1.0, 1.0, -1.0, 1.0))
    rep = recover_additive(w, anchor=(0.0, 0.0), n=17)
    for x in (-0.5, 0.3, 0.9):
        assert rep.u1(x) == pytest.approx(x, abs=1e-12)
        assert rep.u2(x) == pytest.approx(x, abs=1e-12)
        assert rep.phi(x) == pytest.approx(x, abs=1e-9)


def test_recover_product_logs():
    w = web("x*y", SQUARE12)
    rep = recover_additive(w, anchor=(1.0, 1.0), n=33)
    for x in (1.2, 1.5, 1.9):
        assert rep.u1(x) == pytest.approx(math.log(x), abs=1e-10)
        assert rep.u2(x) == pytest.approx(math.log(x), abs=1e-10)
    curve = trace_level_curve(w, (1.2, 1.4), 0.4, step=0.02)
    spread = level_curve_spread(rep, curve)
    values = rep.phi_table
    assert spread <= 1e-6 * (values.max() - values.min())


def test_recover_rejects_nontrivial():
    with pytest.raises(PreconditionError):
        recover_additive(web(NONSEP))


def test_recover_gauge():
    rep = recover_additive(web("x*y", SQUARE12), anchor=(1.5, 1.5), n=17)
    assert rep.u1(1.5) == 0.0 and rep.u2(1.5) == 0.0
    assert rep.u1_prime(1.5) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("seed", range(8))
def test_recover_round_trip(seed):
    sf = random_separable(seed)
    w = sf.web()
    rep = recover_additive(w, n=33)
    xs, ys = rep.anchor
    g1 = ex.lambdify(sf.u1, ("x",))
    g2 = ex.lambdify(sf.u2, ("y",))
    slope = ex.lambdify(ex.differentiate(sf.u1, "x"), ("x",))(xs)
    grid = np.linspace(0.5, 1.5, 11)
    want1 = np.array([(g1(float(x)) - g1(xs)) / slope for x in grid])
    want2 = np.array([(g2(float(y)) - g2(ys)) / slope for y in grid])
    got1 = np.array([rep.u1(float(x)) for x in grid])
    got2 = np.array([rep.u2(float(y)) for y in grid])
    scale1 = max(1.0, np.ptp(want1))
    scale2 = max(1.0, np.ptp(want2))
    assert np.max(np.abs(got1 - want1)) <= 1e-4 * scale1
    assert np.max(np.abs(got2 - want2)) <= 1e-4 * scale2
