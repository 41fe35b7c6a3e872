"""Ground-truth webs and web I/O.

Hotelling webs from profit functions, separable utility fields with their
generators kept, controlled perturbations, and a directory format for
exporting and importing demand webs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from webaudit import expr as ex
from webaudit.errors import (
    DegenerateModelError,
    GridFormatError,
    ScenarioError,
    TransversalityError,
)
from webaudit.field import ClosedFormField, GridField, Rect, grid_from_csv, grid_to_csv
from webaudit.web2 import GridWeb, ImplicitVariable, SymbolicWeb, check_transversality, family_web, map_web
from webaudit.web3 import Web3

SCHEMA_VERSION = 1
KINDS = ("hotelling", "separable-utility", "nonseparable-utility", "map-web", "perturbed")


# ----------------------------------------------------------------------------
# profit models


@dataclass
class ProfitModel:
    """Profit function Pi(p1, p2) with an admissible price rectangle over (p1, p2)."""

    profit: ex.Expression
    prices: Rect

    def __post_init__(self):
        if isinstance(self.profit, str):
            try:
                self.profit = ex.parse(self.profit, variables=("p1", "p2"))
            except ex.ParseError as err:
                raise ScenarioError(f"profit function: {err}") from None
        extra = ex.free_variables(self.profit) - {"p1", "p2"}
        if extra:
            raise ScenarioError(f"profit function uses variables {sorted(extra)} besides p1, p2")


@dataclass
class ComparativeStatics:
    """Sign of dq1/dp2 = -Pi_12 over the price rectangle."""

    dq1_dp2_sign: int
    constant_sign: bool
    min_abs_cross: float

    def as_dict(self):
        return {
            "dq1_dp2_sign": self.dq1_dp2_sign,
            "constant_sign": self.constant_sign,
            "min_abs_cross_partial": self.min_abs_cross,
        }


def _price_sweep(model, n=9):
    return model.prices.probe_grid(n)


def hotelling_demands(model, domain, floor=1e-8, n=9):
    """Demand web q1 = -Pi_p1, q2 = -Pi_p2 over (p1, q1).

    p2 is solved from q1 = -Pi_p1(p1, p2) numerically at each point; q2 is then
    an expression in (p1, p2).  Rejects models whose cross partial vanishes
    (transversality) or whose Hessian is singular (proportional demands).
    """
    pi = model.profit
    d1 = ex.simplify(ex.differentiate(pi, "p1"))
    d2 = ex.simplify(ex.differentiate(pi, "p2"))
    h11 = ex.lambdify(ex.differentiate(d1, "p1"), ("p1", "p2"))
    h12e = ex.simplify(ex.differentiate(d1, "p2"))
    h12 = ex.lambdify(h12e, ("p1", "p2"))
    h22 = ex.lambdify(ex.differentiate(d2, "p2"), ("p1", "p2"))
    signs = set()
    min_cross = math.inf
    for p1, p2 in _price_sweep(model, n):
        a, b, c = h11(p1, p2), h12(p1, p2), h22(p1, p2)
        scale = max(abs(a), abs(b), abs(c))
        if abs(b) <= floor * max(1.0, scale):
            raise TransversalityError(
                f"Pi_p1p2 vanishes at (p1={p1:.6g}, p2={p2:.6g}); demand for factor 1 ignores p2"
            )
        if abs(a * c - b * b) <= 1e-9 * max(scale * scale, 1e-300):
            raise DegenerateModelError(
                f"singular Hessian of Pi at (p1={p1:.6g}, p2={p2:.6g}): the two demands are proportional"
            )
        signs.add(b > 0)
        min_cross = min(min_cross, abs(b))
    statics = ComparativeStatics(-1 if signs == {True} else 1, len(signs) == 1, min_cross)
    if not statics.constant_sign:
        raise TransversalityError("Pi_p1p2 changes sign on the price rectangle")
    q1_rel = ex.simplify(ex.make_unary("neg", d1))
    q2_expr = ex.simplify(ex.make_unary("neg", d2))
    implicit = (ImplicitVariable("p2", q1_rel, (model.prices.ylo, model.prices.yhi)),)
    source = {"profit": ex.unparse(pi), "prices": model.prices.as_list()}
    web = SymbolicWeb(q2_expr, ex.Var("p2"), domain, implicit, kind="hotelling", source=source)
    web.statics = statics
    check_transversality(web)
    return web


# ----------------------------------------------------------------------------
# separable utility fields


@dataclass
class SeparableField:
    """f = psi(U1(x) + U2(y)) with its generating pieces kept for round trips."""

    field: ClosedFormField
    u1: ex.Expression
    u2: ex.Expression
    psi: ex.Expression
    rect: Rect
    description: dict = dc_field(default_factory=dict)

    def web(self, **kw):
        return Web3(self.field, self.rect, **kw)


def separable_field(u1, u2, psi, rect, samples=65):
    """Build psi(U1(x) + U2(y)); psi must be strictly monotone on the range of U1 + U2."""
    u1 = ex.parse(u1, variables=("x",)) if isinstance(u1, str) else u1
    u2 = ex.parse(u2, variables=("y",)) if isinstance(u2, str) else u2
    psi = ex.parse(psi, variables=("t",)) if isinstance(psi, str) else psi
    if ex.free_variables(u1) - {"x"} or ex.free_variables(u2) - {"y"} or ex.free_variables(psi) - {"t"}:
        raise ScenarioError("U1 must use only x, U2 only y and psi only t")
    fu1 = ex.lambdify(u1, ("x",))
    fu2 = ex.lambdify(u2, ("y",))
    xs = np.linspace(rect.xlo, rect.xhi, samples)
    ys = np.linspace(rect.ylo, rect.yhi, samples)
    try:
        v1 = [fu1(float(x)) for x in xs]
        v2 = [fu2(float(y)) for y in ys]
    except ArithmeticError as err:
        raise ScenarioError(f"generator undefined on the rectangle: {err}") from None
    for label, v in (("U1", v1), ("U2", v2)):
        dv = np.diff(v)
        if not (np.all(dv > 0) or np.all(dv < 0)):
            raise ScenarioError(f"{label} is not strictly monotone on the rectangle")
    lo, hi = min(v1) + min(v2), max(v1) + max(v2)
    dpsi = ex.lambdify(ex.differentiate(psi, "t"), ("t",))
    try:
        slopes = [dpsi(float(t)) for t in np.linspace(lo, hi, samples)]
    except ArithmeticError as err:
        raise ScenarioError(f"psi undefined on the range of U1 + U2: {err}") from None
    if not (all(s > 0 for s in slopes) or all(s < 0 for s in slopes)):
        raise ScenarioError("psi is not strictly monotone on the range of U1 + U2")
    f = ex.simplify(ex.substitute(psi, {"t": ex.make_binary("add", u1, u2)}))
    return SeparableField(ClosedFormField(f, ("x", "y"), rect), u1, u2, psi, rect)


_PIECES = (
    lambda v, a, b: f"{a}*{v} + {b}*{v}^3",
    lambda v, a, b: f"{a}*ln({v}) + {b}*{v}",
    lambda v, a, b: f"{a}*exp({b}*{v})",
    lambda v, a, b: f"{a}*sqrt({v}) + {b}*{v}^2",
)
_PSIS = (
    lambda c: "t",
    lambda c: f"exp({c}*t)",
    lambda c: "t^3 + t",
    lambda c: f"{c}*t + t^3",
)


def random_separable(seed, rect=None):
    """Randomized monotone generators (increasing pieces on positive axes)."""
    rect = rect or Rect(0.5, 1.5, 0.5, 1.5)
    rng = np.random.default_rng(seed)

    def piece(var):
        k = int(rng.integers(len(_PIECES)))
        a, b = (round(float(v), 3) for v in rng.uniform(0.2, 1.2, size=2))
        return _PIECES[k](var, a, b), k

    s1, k1 = piece("x")
    s2, k2 = piece("y")
    kp = int(rng.integers(len(_PSIS)))
    c = round(float(rng.uniform(0.2, 0.8)), 3)
    sf = separable_field(s1, s2, _PSIS[kp](c), rect)
    sf.description = {"seed": seed, "u1": s1, "u2": s2, "psi": _PSIS[kp](c)}
    return sf


# ----------------------------------------------------------------------------
# perturbations


def perturb(web, bump, size):
    """Multiply q2 by (1 + size * bump(p1, q1)); reject if transversality is lost."""
    if size < 0:
        raise ValueError("perturbation size must be non-negative")
    if isinstance(bump, str):
        bump = ex.parse(bump, variables=("p1", "q1"))
    if ex.free_variables(bump) - {"p1", "q1"}:
        raise ScenarioError("bump may only use p1 and q1")
    if isinstance(web, GridWeb):
        if size == 0:
            return web
        fb = ex.lambdify(bump, ("q1", "p1"))
        g = web.q2_field
        factor = np.array([[1.0 + size * fb(float(q), float(p)) for q in g.xs] for p in g.ys])
        q2 = GridField(g.x0, g.y0, g.hx, g.hy, g.values * factor, g.names, g.levels, g.interp_order)
        out = GridWeb(q2, web.p2_field, web.domain, web.floor)
    else:
        if size == 0:
            return web
        scale = ex.make_binary("add", ex.ONE, ex.make_binary("mul", ex.Const(size), bump))
        src = dict(web.source)
        src["perturbation"] = {"bump": ex.unparse(bump), "size": size}
        out = web.with_maps(q2=ex.make_binary("mul", web.q2, scale), kind="perturbed", source=src)
    check_transversality(out)
    return out


# ----------------------------------------------------------------------------
# scenario specs


def _rect_from(block, keys):
    try:
        (xlo, xhi), (ylo, yhi) = block[keys[0]], block[keys[1]]
        return Rect(float(xlo), float(xhi), float(ylo), float(yhi))
    except (KeyError, TypeError, ValueError) as err:
        raise ScenarioError(f"rectangle needs {keys[0]} and {keys[1]} as [lo, hi]: {err}") from None


@dataclass
class ScenarioSpec:
    kind: str
    expressions: dict
    rectangle: dict
    perturbation: dict = None
    seed: int = None
    options: dict = dc_field(default_factory=dict)
    version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
        version = data.get("version")
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario version {version!r} (expected {SCHEMA_VERSION})")
        kind = data.get("kind")
        if kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {kind!r}; expected one of {', '.join(KINDS)}")
        spec = cls(
            kind=kind,
            expressions=dict(data.get("expressions") or {}),
            rectangle=dict(data.get("rectangle") or {}),
            perturbation=data.get("perturbation"),
            seed=data.get("seed"),
            options=dict(data.get("options") or {}),
        )
        spec.validate()
        return spec

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ScenarioError(f"cannot read scenario {path}: {err}") from None
        return cls.from_dict(data)

    def as_dict(self):
        out = {"version": self.version, "kind": self.kind, "expressions": self.expressions,
               "rectangle": self.rectangle}
        if self.perturbation is not None:
            out["perturbation"] = self.perturbation
        if self.seed is not None:
            out["seed"] = self.seed
        if self.options:
            out["options"] = self.options
        return out

    def validate(self):
        e = self.expressions
        need = {
            "hotelling": (("profit",),),
            "map-web": (("q2", "p2"),),
            "perturbed": (("profit",), ("q2", "p2")),
            "nonseparable-utility": (("f",),),
            "separable-utility": (("u1", "u2", "psi"), ()),
        }[self.kind]
        if not any(all(k in e for k in keys) for keys in need):
            if not (self.kind == "separable-utility" and self.seed is not None):
                raise ScenarioError(f"kind {self.kind!r} needs expressions {' or '.join(map(str, need))}")
        if self.kind in ("hotelling", "map-web", "perturbed"):
            _rect_from(self.rectangle, ("p1", "q1"))
        else:
            _rect_from(self.rectangle, ("x", "y"))
        if self.kind == "perturbed":
            p = self.perturbation
            if not isinstance(p, dict) or "bump" not in p or "size" not in p:
                raise ScenarioError("perturbed scenarios need perturbation {bump, size}")
            if float(p["size"]) < 0:
                raise ScenarioError("perturbation size must be non-negative")

    def build(self):
        """DemandWeb for demand kinds, SeparableField / Web3 for utility kinds."""
        try:
            return self._build()
        except (ex.ParseError, ValueError) as err:
            raise ScenarioError(f"invalid scenario: {err}") from None

    def _base_web(self):
        e = self.expressions
        domain = _rect_from(self.rectangle, ("p1", "q1"))
        if "profit" in e:
            if "p2" in self.rectangle:
                lo, hi = self.rectangle["p2"]
                prices = Rect(domain.xlo, domain.xhi, float(lo), float(hi))
            else:
                prices = Rect(domain.xlo, domain.xhi, domain.xlo, domain.xhi)
            return hotelling_demands(ProfitModel(e["profit"], prices), domain)
        return map_web(e["q2"], e["p2"], domain)

    def _build(self):
        if self.kind in ("hotelling", "map-web"):
            return self._base_web()
        if self.kind == "perturbed":
            p = self.perturbation
            return perturb(self._base_web(), p["bump"], float(p["size"]))
        rect = _rect_from(self.rectangle, ("x", "y"))
        if self.kind == "nonseparable-utility":
            return Web3(ClosedFormField(self.expressions["f"], ("x", "y"), rect), rect)
        e = self.expressions
        if all(k in e for k in ("u1", "u2", "psi")):
            u2 = e["u2"]
            if self.options.get("symmetric"):
                # even-chance form: U2 is U1 read in y
                u2 = ex.unparse(ex.substitute(ex.parse(e["u1"], variables=("x",)), {"x": ex.Var("y")}))
            return separable_field(e["u1"], u2, e["psi"], rect)
        return random_separable(int(self.seed), rect)


def load_scenario(path):
    return ScenarioSpec.load(path).build()


# ----------------------------------------------------------------------------
# web export / import
#
#   <dir>/manifest.json   {"version", "kind", "domain": {"p1", "q1"}, "floor", ...}
#   <dir>/q2.csv, p2.csv  grid webs only, field CSV format over (q1, p1)


def export_web(web, path):
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    dom = web.domain
    manifest = {
        "version": SCHEMA_VERSION,
        "domain": {"p1": [dom.xlo, dom.xhi], "q1": [dom.ylo, dom.yhi]},
        "floor": web.floor,
    }
    if isinstance(web, GridWeb):
        manifest["format"] = "grid"
        manifest["files"] = {"q2": "q2.csv", "p2": "p2.csv"}
        grid_to_csv(web.q2_field, d / "q2.csv")
        grid_to_csv(web.p2_field, d / "p2.csv")
    elif isinstance(web, SymbolicWeb):
        manifest["format"] = "closed-form"
        manifest["kind"] = web.kind
        manifest["q2"] = ex.unparse(web.q2)
        manifest["p2"] = ex.unparse(web.p2)
        manifest["implicit"] = [
            {"name": v.name, "relation": ex.unparse(v.relation), "bracket": list(v.bracket)} for v in web.implicit
        ]
        manifest["source"] = web.source
    else:
        raise ScenarioError(f"cannot export {type(web).__name__}")
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def import_web(path):
    d = Path(path)
    if not d.is_dir():
        raise ScenarioError(f"web directory {d} does not exist")
    try:
        m = json.loads((d / "manifest.json").read_text())
    except OSError as err:
        raise ScenarioError(f"cannot read manifest: {err}") from None
    except json.JSONDecodeError as err:
        raise ScenarioError(f"malformed manifest: {err}") from None
    if not isinstance(m, dict) or m.get("version") != SCHEMA_VERSION:
        raise ScenarioError(f"manifest schema version {m.get('version') if isinstance(m, dict) else None!r} "
                            f"not supported (expected {SCHEMA_VERSION})")
    try:
        domain = _rect_from(m["domain"], ("p1", "q1"))
        floor = float(m.get("floor", 1e-6))
        fmt = m["format"]
        if fmt == "grid":
            files = m["files"]
            q2 = grid_from_csv(d / files["q2"], ("q1", "p1"))
            p2 = grid_from_csv(d / files["p2"], ("q1", "p1"))
            return GridWeb(q2, p2, domain, floor)
        if fmt == "closed-form":
            implicit = [
                ImplicitVariable(v["name"], ex.parse(v["relation"]), tuple(v["bracket"])) for v in m["implicit"]
            ]
            return SymbolicWeb(
                ex.parse(m["q2"]), ex.parse(m["p2"]), domain, implicit, floor, m.get("kind", "map-web"),
                m.get("source"),
            )
        raise ScenarioError(f"unknown web format {fmt!r}")
    except (KeyError, TypeError) as err:
        raise ScenarioError(f"manifest is missing {err}") from None
    except (GridFormatError, ex.ParseError, OSError) as err:
        raise ScenarioError(f"cannot load web data: {err}") from None


__all__ = [
    "ComparativeStatics", "KINDS", "ProfitModel", "SCHEMA_VERSION", "ScenarioSpec", "SeparableField",
    "export_web", "family_web", "hotelling_demands", "import_web", "load_scenario", "perturb",
    "random_separable", "separable_field",
]
