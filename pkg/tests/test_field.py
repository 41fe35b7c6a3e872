import math

import numpy as np
import pytest

from webaudit.errors import DerivativeError, ExprError, GridFormatError, OutOfDomainError
from webaudit.field import (
    ClosedFormField,
    DiffConfig,
    GridField,
    Rect,
    grid_from_csv,
    grid_to_csv,
    partial,
    sample_to_grid,
)

CORPUS = [
    "x+y+x^2*y",
    "x*y",
    "exp(x)*y",
    "ln(x+y)",
    "sqrt(x*y+1)",
    "x^3*y^2",
    "x/(1+y)",
    "exp(x*y)/(x+y)",
]
UNIT = Rect(0.5, 1.5, 0.5, 1.5)
PROBES = UNIT.inset(0.15).probe_grid(5)
ORDERS = [(i, j) for i in range(5) for j in range(5) if 0 < i + j <= 4]


def rel_err(sym, num):
    return abs(sym - num) / max(1.0, abs(sym))


def write_grid(path, header, rows):
    path.write_text(header + "\n" + "\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


# ---------------------------------------------------------------- examples


@pytest.mark.parametrize("point", [(0.3, 0.7), (1.0, 1.0), (-2.0, 5.0)])
def test_partial_sum_first_order(point):
    assert partial(ClosedFormField("x+y"), (1, 0), point) == 1.0


@pytest.mark.parametrize("point", [(0.3, 0.7), (1.0, 1.0), (-2.0, 5.0)])
def test_partial_product_mixed(point):
    assert partial(ClosedFormField("x*y"), (1, 1), point) == 1.0


def test_partial_nonseparable_at_one():
    assert partial(ClosedFormField("x+y+x^2*y"), (1, 0), (1.0, 1.0)) == pytest.approx(3.0, abs=1e-14)


def test_order_above_four_rejected():
    with pytest.raises(DerivativeError):
        partial(ClosedFormField("x*y"), (3, 2), (1.0, 1.0))


def test_closed_form_out_of_domain():
    f = ClosedFormField("x*y", domain=Rect(0, 1, 0, 1))
    with pytest.raises(OutOfDomainError):
        f.partial((1, 0), (2.0, 0.5))


def test_non_finite_partial_is_error():
    f = ClosedFormField("ln(x)+y")
    with pytest.raises((DerivativeError, ExprError, ArithmeticError)):
        f.partial((1, 0), (0.0, 1.0))


def test_csv_three_by_three(tmp_path):
    rows = [[x + y for x in range(3)] for y in range(3)]
    path = write_grid(tmp_path / "g.csv", "# x0=0 y0=0 hx=1 hy=1 nx=3 ny=3", rows)
    g = grid_from_csv(path)
    assert g.partial((1, 0), (1.0, 1.0)) == pytest.approx(1.0, abs=1e-12)


def test_csv_nan_cell_rejected(tmp_path):
    rows = [[0, 1, 2], [1, "nan", 3], [2, 3, 4]]
    path = write_grid(tmp_path / "g.csv", "# x0=0 y0=0 hx=1 hy=1 nx=3 ny=3", rows)
    with pytest.raises(GridFormatError):
        grid_from_csv(path)


def test_csv_ragged_rows_rejected(tmp_path):
    rows = [[0, 1, 2], [1, 2], [2, 3, 4]]
    path = write_grid(tmp_path / "g.csv", "# x0=0 y0=0 hx=1 hy=1 nx=3 ny=3", rows)
    with pytest.raises(GridFormatError):
        grid_from_csv(path)


def test_csv_non_monotone_axis_rejected(tmp_path):
    rows = [[0, 1, 2], [1, 2, 3], [2, 3, 4]]
    header = "# x0=0 y0=0 hx=1 hy=1 nx=3 ny=3\n# xs=0,2,1"
    path = write_grid(tmp_path / "g.csv", header, rows)
    with pytest.raises(GridFormatError):
        grid_from_csv(path)


def test_csv_non_uniform_axis_rejected(tmp_path):
    rows = [[0, 1, 2], [1, 2, 3], [2, 3, 4]]
    header = "# x0=0 y0=0 hx=1 hy=1 nx=3 ny=3\n# xs=0,1,2.001"
    path = write_grid(tmp_path / "g.csv", header, rows)
    with pytest.raises(GridFormatError):
        grid_from_csv(path)


def test_csv_missing_header_rejected(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("0,1\n1,2\n")
    with pytest.raises(GridFormatError):
        grid_from_csv(path)


def test_csv_product_mixed_partial(tmp_path):
    g = sample_to_grid(ClosedFormField("x*y"), Rect(1, 2, 1, 2), 65)
    path = tmp_path / "xy.csv"
    grid_to_csv(g, path)
    back = grid_from_csv(path)
    assert back.partial((1, 1), (1.5, 1.5)) == pytest.approx(1.0, abs=1e-6)


def test_csv_round_trip_bit_exact(tmp_path):
    g = sample_to_grid(ClosedFormField("exp(x)*sqrt(y)"), UNIT, 17)
    path = tmp_path / "g.csv"
    grid_to_csv(g, path)
    back = grid_from_csv(path)
    assert np.array_equal(back.values, g.values)
    assert (back.x0, back.y0, back.hx, back.hy) == (g.x0, g.y0, g.hx, g.hy)


def test_sample_sum_corners():
    g = sample_to_grid(ClosedFormField("x+y"), Rect(0, 1, 0, 1), 17)
    assert g.values[0, 0] == 0.0
    assert g.values[-1, -1] == 2.0


def test_sample_domain_error():
    with pytest.raises((ArithmeticError, ExprError)):
        sample_to_grid(ClosedFormField("1/(x*y)"), Rect(-1, 1, -1, 1), 17)


def test_sample_needs_nine_nodes():
    with pytest.raises(ValueError):
        sample_to_grid(ClosedFormField("x+y"), UNIT, 8)


def test_sample_nonseparable_mixed():
    g = sample_to_grid(ClosedFormField("x+y+x^2*y"), UNIT, 65)
    assert g.partial((1, 1), (1.0, 1.0)) == pytest.approx(2.0, abs=1e-4)


# ---------------------------------------------------------------- invariants


def test_grid_validity_region_is_inset():
    g = sample_to_grid(ClosedFormField("x*y"), UNIT, 33)
    region = g.region((2, 2))
    assert region.xlo > UNIT.xlo and region.xhi < UNIT.xhi
    with pytest.raises(OutOfDomainError):
        g.partial((2, 2), (UNIT.xlo, 1.0))
    with pytest.raises(OutOfDomainError):
        g.value(UNIT.xhi + 0.01, 1.0)


def test_grid_rejects_non_finite_samples():
    with pytest.raises(GridFormatError):
        GridField(0, 0, 1, 1, [[0.0, math.inf], [1.0, 2.0]])


def test_diff_config_invariants():
    with pytest.raises(ValueError):
        DiffConfig(levels=0)
    with pytest.raises(ValueError):
        DiffConfig(h=(0.0, None))


@pytest.fixture(scope="module")
def corpus_grids():
    return {f: sample_to_grid(ClosedFormField(f), UNIT, 65) for f in CORPUS}


@pytest.mark.parametrize("expr", CORPUS)
@pytest.mark.parametrize("order", ORDERS, ids=str)
def test_grid_matches_symbolic(expr, order, corpus_grids):
    f = ClosedFormField(expr)
    g = corpus_grids[expr]
    worst = max(rel_err(f.partial(order, p), g.partial(order, p)) for p in PROBES)
    assert worst <= 1e-3


def _richardson_xfail(order):
    if sum(order) >= 3:
        return pytest.mark.xfail(
            reason="double-precision floor of two-level Richardson for order >= 3 sits above 1e-8",
            strict=False,
        )
    return ()


@pytest.mark.parametrize("expr", CORPUS)
@pytest.mark.parametrize(
    "order", [pytest.param(o, marks=_richardson_xfail(o), id=str(o)) for o in ORDERS]
)
def test_richardson_matches_symbolic(expr, order):
    f = ClosedFormField(expr)
    worst = max(rel_err(f.partial(order, p), f.numeric_partial(order, p)) for p in PROBES)
    assert worst <= 1e-8


# measured accuracy floors of the default closed-form Richardson route; a
# regression above these bounds means the step heuristic or stencils broke
FLOORS = {1: 1e-11, 2: 1e-8, 3: 2e-7, 4: 2e-5}


@pytest.mark.parametrize("total", [1, 2, 3, 4])
def test_richardson_floor_regression(total):
    worst = 0.0
    for expr in CORPUS:
        f = ClosedFormField(expr)
        for order in ORDERS:
            if sum(order) != total:
                continue
            for p in PROBES:
                worst = max(worst, rel_err(f.partial(order, p), f.numeric_partial(order, p)))
    assert worst <= FLOORS[total]


@pytest.mark.parametrize("expr", CORPUS)
def test_interpolation_consistency(expr):
    # bicubic interpolation of a smooth field: error falls roughly as h^4
    f = ClosedFormField(expr)
    rng = np.random.default_rng(7)
    pts = rng.uniform(0.55, 1.45, size=(40, 2))
    errs = []
    for n in (17, 33):
        g = sample_to_grid(f, UNIT, n)
        errs.append(max(abs(g.value(x, y) - f.value(x, y)) for x, y in pts))
    assert errs[1] <= 1e-5
    if errs[0] > 1e-12:
        assert errs[0] / max(errs[1], 1e-16) >= 8.0


def test_grid_node_values_exact():
    f = ClosedFormField("exp(x)*y")
    g = sample_to_grid(f, UNIT, 9)
    for x in g.xs:
        for y in g.ys:
            assert g.value(float(x), float(y)) == f.value(float(x), float(y))


def test_fields_are_immutable():
    g = sample_to_grid(ClosedFormField("x*y"), UNIT, 9)
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0
