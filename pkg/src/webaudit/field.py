"""Bivariate scalar fields with mixed partial derivatives up to total order 4.

Two realizations share one interface:

* :class:`ClosedFormField` wraps an :class:`~webaudit.expr.Expression`; partials
  are symbolic.  A Richardson finite-difference route is kept alongside for
  cross-checks (:meth:`ClosedFormField.numeric_partial`).
* :class:`GridField` holds uniform samples; partials come from centered
  stencils with Richardson extrapolation on the nodes, then bicubic spline
  interpolation of the derivative table.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from webaudit import expr as ex
from webaudit.errors import DerivativeError, GridFormatError, OutOfDomainError
from webaudit.numerics import STENCILS, mixed_stencil, richardson

MAX_ORDER = 4
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Rect:
    xlo: float
    xhi: float
    ylo: float
    yhi: float

    def __post_init__(self):
        if not (self.xlo < self.xhi and self.ylo < self.yhi):
            raise ValueError(f"degenerate rectangle {self}")

    @classmethod
    def from_seq(cls, seq):
        xlo, xhi, ylo, yhi = (float(v) for v in seq)
        return cls(xlo, xhi, ylo, yhi)

    @property
    def width(self):
        return self.xhi - self.xlo

    @property
    def height(self):
        return self.yhi - self.ylo

    @property
    def center(self):
        return (0.5 * (self.xlo + self.xhi), 0.5 * (self.ylo + self.yhi))

    def contains(self, x, y, slack=1e-12):
        sx = slack * max(1.0, abs(self.xlo), abs(self.xhi))
        sy = slack * max(1.0, abs(self.ylo), abs(self.yhi))
        return self.xlo - sx <= x <= self.xhi + sx and self.ylo - sy <= y <= self.yhi + sy

    def inset(self, frac):
        dx, dy = frac * self.width, frac * self.height
        return Rect(self.xlo + dx, self.xhi - dx, self.ylo + dy, self.yhi - dy)

    def intersect(self, other):
        return Rect(
            max(self.xlo, other.xlo), min(self.xhi, other.xhi), max(self.ylo, other.ylo), min(self.yhi, other.yhi)
        )

    def probe_grid(self, n):
        """n x n points, row-major in y then x."""
        xs = np.linspace(self.xlo, self.xhi, n)
        ys = np.linspace(self.ylo, self.yhi, n)
        return [(float(x), float(y)) for y in ys for x in xs]

    def as_list(self):
        return [self.xlo, self.xhi, self.ylo, self.yhi]


@dataclass(frozen=True)
class DiffConfig:
    """Finite-difference controls: base step per axis (None = automatic),
    Richardson levels, relative tolerance used by consistency checks."""

    h: tuple = (None, None)
    levels: int = 2
    rtol: float = 1e-8

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        for v in self.h:
            if v is not None and not v > 0:
                raise ValueError("step must be positive")

    def step(self, axis, order_total, coord):
        if self.h[axis] is not None:
            return self.h[axis]
        return default_step(order_total, coord, self.levels)


def default_step(k, coord, levels=1):
    """eps^(1/(2L+k)) scaled by the coordinate magnitude, L = Richardson levels.

    With L = 1 this is the usual truncation/round-off balance for a k-th
    derivative by second-order stencils; every Richardson level removes two
    more orders of truncation error, which moves the balance to larger h.
    """
    return _EPS ** (1.0 / (2 * levels + k)) * max(1.0, abs(coord))


def _check_order(order):
    i, j = order
    if i < 0 or j < 0:
        raise DerivativeError(f"negative derivative order {order}")
    if i + j > MAX_ORDER:
        raise DerivativeError(f"derivative order {i}+{j} exceeds {MAX_ORDER}")


def finite_difference_partial(func, order, point, cfg=None):
    """Richardson-extrapolated central difference of ``func(x, y)``."""
    cfg = cfg or DiffConfig()
    _check_order(order)
    i, j = order
    if i + j == 0:
        return float(func(*point))
    k = i + j
    hx = cfg.step(0, k, point[0])
    hy = cfg.step(1, k, point[1])
    estimates = [mixed_stencil(func, order, point, (hx / 2**m, hy / 2**m)) for m in range(cfg.levels)]
    value = richardson(estimates)
    if not math.isfinite(value):
        raise DerivativeError(f"non-finite finite-difference partial {order} at {point}")
    return value


class ScalarField2D:
    """Common interface.  ``names`` are the two coordinate names (x, y)."""

    names = ("x", "y")
    validity = None  # Rect or None for unbounded
    symbolic = False

    def value(self, x, y):
        raise NotImplementedError

    def partial(self, order, point, cfg=None):
        raise NotImplementedError

    def __call__(self, x, y):
        return self.value(x, y)

    def check_point(self, x, y, rect=None):
        rect = rect or self.validity
        if rect is not None and not rect.contains(x, y):
            raise OutOfDomainError(f"point ({x}, {y}) outside validity region {rect.as_list()}")


class ClosedFormField(ScalarField2D):
    """Field given by an expression in two named variables."""

    symbolic = True

    def __init__(self, expression, names=("x", "y"), domain=None):
        if isinstance(expression, str):
            expression = ex.parse(expression, variables=names)
        extra = ex.free_variables(expression) - set(names)
        if extra:
            raise ValueError(f"expression uses variables {sorted(extra)} outside {names}")
        self.expression = expression
        self.names = tuple(names)
        self.validity = domain
        self._derivs = {(0, 0): expression}
        self._compiled = {}

    def __repr__(self):
        return f"ClosedFormField({ex.unparse(self.expression)!r}, names={self.names})"

    # symbolic hooks, overridden by fields living on implicit charts
    def d(self, e, axis):
        return ex.differentiate(e, self.names[axis])

    def bindings(self, x, y):
        return {self.names[0]: x, self.names[1]: y}

    @property
    def variables(self):
        return self.names

    def derivative_expr(self, order, base=None):
        """Symbolic partial of ``base`` (default: the field expression)."""
        _check_order(order)
        if base is not None:
            e = base
            for _ in range(order[0]):
                e = self.d(e, 0)
            for _ in range(order[1]):
                e = self.d(e, 1)
            return e
        if order not in self._derivs:
            i, j = order
            if j > 0:
                prev = self.derivative_expr((i, j - 1))
                self._derivs[order] = self.d(prev, 1)
            else:
                prev = self.derivative_expr((i - 1, j))
                self._derivs[order] = self.d(prev, 0)
        return self._derivs[order]

    def compiled(self, e):
        fn = self._compiled.get(e)
        if fn is None:
            fn = ex.lambdify(e, self.variables)
            self._compiled[e] = fn
        return fn

    def eval_expr(self, e, x, y):
        b = self.bindings(x, y)
        return self.compiled(e)(*(b[n] for n in self.variables))

    def value(self, x, y):
        return self.eval_expr(self.expression, x, y)

    def partial(self, order, point, cfg=None):
        x, y = point
        self.check_point(x, y)
        v = self.eval_expr(self.derivative_expr(order), x, y)
        if not math.isfinite(v):
            raise DerivativeError(f"non-finite partial {order} at {point}")
        return v

    def numeric_partial(self, order, point, cfg=None):
        self.check_point(*point)
        return finite_difference_partial(self.value, order, point, cfg)


def _axis_plan(m):
    """Decompose an axis derivative of order m into narrow stencils."""
    return [2] * (m // 2) + [1] * (m % 2)


def _apply_axis(arr, order, spacing, levels, axis):
    """Richardson-combined central difference along ``axis``; trims the edges.

    Grids too short for the requested levels fall back to fewer levels.
    Returns (array, radius in nodes).
    """
    coeffs = STENCILS[order]
    r = len(coeffs) // 2
    n = arr.shape[axis]
    while levels > 1 and n - 2 * r * 2 ** (levels - 1) <= 0:
        levels -= 1
    radius = r * 2 ** (levels - 1)
    if n - 2 * radius <= 0:
        raise DerivativeError("grid too small for the requested stencil")
    estimates = []
    for m in range(levels - 1, -1, -1):
        s = 2**m  # node stride; largest first
        acc = 0.0
        for idx, c in enumerate(coeffs):
            if c == 0.0:
                continue
            off = (idx - r) * s
            sl = [slice(None)] * arr.ndim
            sl[axis] = slice(radius + off, n - radius + off)
            acc = acc + c * arr[tuple(sl)]
        estimates.append(acc / (s * spacing) ** order)
    return richardson(estimates), radius


class GridField(ScalarField2D):
    """Uniform samples ``values[iy, ix]`` at (x0 + ix*hx, y0 + iy*hy)."""

    def __init__(self, x0, y0, hx, hy, values, names=("x", "y"), levels=2, interp_order=3):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise GridFormatError("grid samples must form a 2-D array")
        if not (hx > 0 and hy > 0):
            raise GridFormatError("grid spacing must be positive")
        if not np.all(np.isfinite(values)):
            raise GridFormatError("grid contains non-finite samples")
        self.x0, self.y0, self.hx, self.hy = float(x0), float(y0), float(hx), float(hy)
        self.values = values
        self.values.setflags(write=False)
        self.names = tuple(names)
        self.levels = levels
        self.interp_order = interp_order
        self._arrays = {}
        self._splines = {}

    def __repr__(self):
        ny, nx = self.values.shape
        return f"GridField(nx={nx}, ny={ny}, origin=({self.x0}, {self.y0}), h=({self.hx}, {self.hy}))"

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def xs(self):
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def ys(self):
        return self.y0 + self.hy * np.arange(self.ny)

    @property
    def validity(self):
        return Rect(self.x0, self.x0 + self.hx * (self.nx - 1), self.y0, self.y0 + self.hy * (self.ny - 1))

    def derivative_array(self, order):
        """(array, x-radius, y-radius) of the node-wise partial ``order``."""
        _check_order(order)
        if order not in self._arrays:
            arr = self.values
            rx = ry = 0
            for m in _axis_plan(order[0]):
                arr, r = _apply_axis(arr, m, self.hx, self.levels, axis=1)
                rx += r
            for m in _axis_plan(order[1]):
                arr, r = _apply_axis(arr, m, self.hy, self.levels, axis=0)
                ry += r
            self._arrays[order] = (arr, rx, ry)
        return self._arrays[order]

    def _region_bounds(self, order):
        _, rx, ry = self.derivative_array(order)
        v = self.validity
        return (v.xlo + rx * self.hx, v.xhi - rx * self.hx, v.ylo + ry * self.hy, v.yhi - ry * self.hy)

    def region(self, order):
        """Validity sub-rectangle for ``order``: inset by the stencil radius.

        Raises DerivativeError when the region shrinks to a line or a point.
        """
        try:
            return Rect(*self._region_bounds(order))
        except ValueError:
            raise DerivativeError(f"validity region for {order} is degenerate") from None

    def _spline(self, order):
        if order not in self._splines:
            arr, rx, ry = self.derivative_array(order)
            xs = self.x0 + self.hx * (rx + np.arange(arr.shape[1]))
            ys = self.y0 + self.hy * (ry + np.arange(arr.shape[0]))
            kx = min(self.interp_order, arr.shape[1] - 1)
            ky = min(self.interp_order, arr.shape[0] - 1)
            self._splines[order] = RectBivariateSpline(ys, xs, arr, kx=ky, ky=kx, s=0)
        return self._splines[order]

    def _node_value(self, order, x, y):
        """Exact table value when (x, y) sits on a node, else None."""
        arr, rx, ry = self.derivative_array(order)
        fx = (x - self.x0) / self.hx - rx
        fy = (y - self.y0) / self.hy - ry
        ix, iy = round(fx), round(fy)
        if abs(fx - ix) < 1e-9 and abs(fy - iy) < 1e-9 and 0 <= ix < arr.shape[1] and 0 <= iy < arr.shape[0]:
            return float(arr[iy, ix])
        return None

    def _lookup(self, order, x, y):
        xlo, xhi, ylo, yhi = self._region_bounds(order)
        tol = 1e-12 * max(1.0, abs(xlo), abs(xhi), abs(ylo), abs(yhi))
        if not (xlo - tol <= x <= xhi + tol and ylo - tol <= y <= yhi + tol):
            raise OutOfDomainError(f"point ({x}, {y}) outside validity region {[xlo, xhi, ylo, yhi]}")
        v = self._node_value(order, x, y)
        if v is None:
            v = float(self._spline(order)(y, x)[0, 0])
        if not math.isfinite(v):
            raise DerivativeError(f"non-finite grid partial {order} at ({x}, {y})")
        return v

    def value(self, x, y):
        return self._lookup((0, 0), x, y)

    def partial(self, order, point, cfg=None):
        return self._lookup(tuple(order), *point)

    def derive(self, func, orders):
        """New grid of ``func(*partials)`` on the nodes where all ``orders`` exist."""
        return derive_grids(func, [(self, o) for o in orders])

    def same_geometry(self, other):
        return (
            isinstance(other, GridField)
            and self.values.shape == other.values.shape
            and (self.x0, self.y0, self.hx, self.hy) == (other.x0, other.y0, other.hx, other.hy)
        )


def derive_grids(func, terms):
    """Combine node-wise partials of grids sharing one geometry.

    ``terms`` is a list of (GridField, order); the result lives on the nodes
    where every requested partial is available.
    """
    base = terms[0][0]
    for g, _ in terms[1:]:
        if not base.same_geometry(g):
            raise ValueError("grids differ in geometry")
    tables = [g.derivative_array(tuple(o)) for g, o in terms]
    rx = max(t[1] for t in tables)
    ry = max(t[2] for t in tables)
    nx = base.nx - 2 * rx
    ny = base.ny - 2 * ry
    cut = []
    for arr, ax, ay in tables:
        dx, dy = rx - ax, ry - ay
        cut.append(arr[dy : dy + ny, dx : dx + nx])
    with np.errstate(all="ignore"):
        out = func(*cut)
    if not np.all(np.isfinite(out)):
        raise DerivativeError("derived grid has non-finite entries")
    return GridField(
        base.x0 + rx * base.hx, base.y0 + ry * base.hy, base.hx, base.hy, out, base.names, base.levels,
        base.interp_order,
    )


def partial(field, order, point, cfg=None):
    """Mixed partial d^(i+j) f / dx^i dy^j of ``field`` at ``point``."""
    return field.partial(tuple(order), tuple(point), cfg)


def sample_to_grid(field, rect, n, names=None):
    """Sample ``field`` on an n x n (or (nx, ny)) uniform grid covering ``rect``."""
    nx, ny = (n, n) if isinstance(n, int) else n
    if nx < 9 or ny < 9:
        raise ValueError("need at least 9 samples per axis")
    xs = np.linspace(rect.xlo, rect.xhi, nx)
    ys = np.linspace(rect.ylo, rect.yhi, ny)
    vals = np.empty((ny, nx))
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            vals[iy, ix] = field.value(float(x), float(y))
    hx = (rect.xhi - rect.xlo) / (nx - 1)
    hy = (rect.yhi - rect.ylo) / (ny - 1)
    return GridField(rect.xlo, rect.ylo, hx, hy, vals, names or field.names)


# ----------------------------------------------------------------------------
# CSV grid format
#
#   # x0=<v> y0=<v> hx=<v> hy=<v> nx=<n> ny=<n>
#   ny rows of nx comma-separated samples, row index advancing y
#
# Optional extra comment lines "# xs=..." / "# ys=..." list the axis
# coordinates; when present they must be monotone and uniformly spaced.

_HEADER_KEYS = ("x0", "y0", "hx", "hy", "nx", "ny")
_KV = re.compile(r"(\w+)=(\S+)")


def _parse_header(line):
    if not line.startswith("#"):
        raise GridFormatError("missing '# x0=... ny=...' header line")
    kv = dict(_KV.findall(line))
    missing = [k for k in _HEADER_KEYS if k not in kv]
    if missing:
        raise GridFormatError(f"header lacks {', '.join(missing)}")
    try:
        return {
            "x0": float(kv["x0"]), "y0": float(kv["y0"]), "hx": float(kv["hx"]), "hy": float(kv["hy"]),
            "nx": int(kv["nx"]), "ny": int(kv["ny"]),
        }
    except ValueError as err:
        raise GridFormatError(f"bad header value: {err}") from None


def _check_axis(label, coords, start, step, n):
    coords = np.asarray(coords, dtype=float)
    if len(coords) != n:
        raise GridFormatError(f"{label} lists {len(coords)} coordinates, header says {n}")
    diffs = np.diff(coords)
    if np.any(diffs <= 0):
        raise GridFormatError(f"{label} axis is not strictly increasing")
    if np.max(np.abs(diffs - step)) > 1e-9 * abs(step):
        raise GridFormatError(f"{label} axis spacing is not uniform to 1e-9 relative")
    if abs(coords[0] - start) > 1e-9 * max(1.0, abs(start)):
        raise GridFormatError(f"{label} axis does not start at the declared origin")


def grid_from_csv(path, names=("x", "y")):
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GridFormatError("empty grid file")
    head = _parse_header(lines[0])
    axes = {}
    rows = []
    for ln in lines[1:]:
        if ln.startswith("#"):
            m = re.match(r"#\s*(xs|ys)=(.*)", ln)
            if m:
                try:
                    axes[m.group(1)] = [float(v) for v in m.group(2).split(",")]
                except ValueError:
                    raise GridFormatError(f"bad axis line {ln!r}") from None
            continue
        try:
            rows.append([float(v) for v in ln.split(",")])
        except ValueError:
            raise GridFormatError(f"non-numeric cell in row {len(rows)}") from None
    if len(rows) != head["ny"]:
        raise GridFormatError(f"expected {head['ny']} rows, found {len(rows)}")
    for k, row in enumerate(rows):
        if len(row) != head["nx"]:
            raise GridFormatError(f"ragged row {k}: {len(row)} cells, expected {head['nx']}")
    vals = np.array(rows)
    if np.isnan(vals).any():
        raise GridFormatError("grid contains NaN cells")
    if head["hx"] <= 0 or head["hy"] <= 0:
        raise GridFormatError("axes must be increasing (positive spacing)")
    if "xs" in axes:
        _check_axis("x", axes["xs"], head["x0"], head["hx"], head["nx"])
    if "ys" in axes:
        _check_axis("y", axes["ys"], head["y0"], head["hy"], head["ny"])
    return GridField(head["x0"], head["y0"], head["hx"], head["hy"], vals, names)


def grid_to_csv(field, path):
    """Write a :class:`GridField`; shortest round-trip decimals, so reload is exact."""
    header = (
        f"# x0={field.x0!r} y0={field.y0!r} hx={field.hx!r} hy={field.hy!r} nx={field.nx} ny={field.ny}\n"
    )
    body = "\n".join(",".join(repr(float(v)) for v in row) for row in field.values)
    Path(path).write_text(header + body + "\n")
