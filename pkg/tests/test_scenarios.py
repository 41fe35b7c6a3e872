import json
import math

import numpy as np
import pytest

from conftest import HOTELLING_P2, HOTELLING_Q2, PRICE_BOX
from webaudit import web2
from webaudit.errors import (
    DegenerateModelError,
    RegularityError,
    ScenarioError,
    TransversalityError,
)
from webaudit.field import ClosedFormField, Rect, sample_to_grid
from webaudit.scenarios import (
    SCHEMA_VERSION,
    ProfitModel,
    ScenarioSpec,
    export_web,
    hotelling_demands,
    import_web,
    load_scenario,
    perturb,
    random_separable,
    separable_field,
)
from webaudit.web3 import Web3, recover_additive, separability_test

PRICES = Rect(0.8, 1.25, 0.8, 1.25)


def statuses(report):
    return {k: v["status"] for k, v in report.verdicts.items()}


@pytest.fixture(scope="module")
def hotelling_web():
    return hotelling_demands(ProfitModel("1/(p1*p2)", PRICES), PRICE_BOX)


# ---------------------------------------------------------------- Hotelling


def test_hotelling_inversion(hotelling_web):
    for p1, q1 in PRICE_BOX.probe_grid(4):
        s = web2.induced_map(hotelling_web, (p1, q1))
        assert s.q2 == pytest.approx(p1**3 * q1**2, rel=1e-12)
        assert s.p2 == pytest.approx(1 / (p1**2 * q1), rel=1e-12)
        assert s.det == pytest.approx(-1.0, abs=1e-10)


def test_hotelling_comparative_statics(hotelling_web):
    st = hotelling_web.statics
    # q1 = 1/(p1^2 p2) falls as p2 rises: dq1/dp2 = -Pi_12 < 0
    assert st.constant_sign
    assert st.dq1_dp2_sign == -1
    assert st.min_abs_cross > 0


def test_hotelling_no_cross_effect():
    with pytest.raises(TransversalityError):
        hotelling_demands(ProfitModel("p1+p2", PRICES), PRICE_BOX)


def test_hotelling_proportional_demands():
    with pytest.raises(DegenerateModelError):
        hotelling_demands(ProfitModel("exp(-p1-p2)", PRICES), Rect(0.8, 1.25, 0.1, 0.2))


def test_profit_model_variables():
    with pytest.raises(ScenarioError):
        ProfitModel("p1*q1", PRICES)


@pytest.mark.parametrize(
    "profit, domain",
    [
        ("1/(p1*p2)", PRICE_BOX),
        ("1/(p1*p2)+1/p1+1/p2", Rect(0.95, 1.05, 1.9, 2.3)),
        ("p1^(-0.5)*p2^(-0.5)", Rect(0.95, 1.05, 0.45, 0.57)),
    ],
)
def test_hotelling_webs_pass_audit(profit, domain):
    w = hotelling_demands(ProfitModel(profit, Rect(0.5, 2.0, 0.5, 2.0)), domain)
    rep = web2.audit(w)
    assert set(statuses(rep).values()) == {"pass"}


# ---------------------------------------------------------------- separable fields


def test_separable_exp_sum():
    sf = separable_field("x", "y", "exp(t)", Rect(0.0, 1.0, 0.0, 1.0))
    for x, y in Rect(0.0, 1.0, 0.0, 1.0).probe_grid(3):
        assert sf.field.value(x, y) == pytest.approx(math.exp(x + y), rel=1e-14)


def test_separable_product():
    sf = separable_field("ln(x)", "ln(y)", "exp(t)", Rect(1.0, 2.0, 1.0, 2.0))
    for x, y in Rect(1.0, 2.0, 1.0, 2.0).probe_grid(3):
        assert sf.field.value(x, y) == pytest.approx(x * y, rel=1e-13)
    assert separability_test(sf.web(), tol=1e-8).verdict == "trivial"


def test_separable_cubic_relabel():
    rect = Rect(0.0, 1.0, 0.0, 1.0)
    sf = separable_field("x^2", "y", "t^3+t", rect)
    for x, y in rect.probe_grid(3):
        t = x * x + y
        assert sf.field.value(x, y) == pytest.approx(t**3 + t, rel=1e-14)
    # f_x vanishes on x = 0, so the full square is not in general position
    with pytest.raises(RegularityError):
        sf.web()
    inner = Web3(sf.field, Rect(0.05, 1.0, 0.0, 1.0))
    assert separability_test(inner, tol=1e-8).verdict == "trivial"


def test_separable_rejects_non_monotone():
    with pytest.raises(ScenarioError):
        separable_field("(x-1)^2", "y", "t", Rect(0.5, 1.5, 0.5, 1.5))
    with pytest.raises(ScenarioError):
        separable_field("x", "y", "(t-2)^2", Rect(0.5, 1.5, 0.5, 1.5))


def test_random_separable_reproducible():
    a = random_separable(42)
    b = random_separable(42)
    assert a.description == b.description
    assert a.description["seed"] == 42


@pytest.mark.parametrize("seed", range(10))
def test_every_separable_field_is_trivial(seed):
    sf = random_separable(seed)
    w = sf.web()
    assert separability_test(w, tol=1e-8).verdict == "trivial"
    recover_additive(w, n=17)


# ---------------------------------------------------------------- perturbations


def test_perturb_zero_is_identity(hotelling_map):
    same = perturb(hotelling_map, "p1*q1", 0.0)
    assert statuses(web2.audit(same)) == statuses(web2.audit(hotelling_map))


def test_perturb_breaks_lagrangian(hotelling_map):
    w = perturb(hotelling_map, "p1*q1", 0.1)
    assert w.kind == "perturbed"
    assert web2.lagrangian_residual(w, (1.0, 1.0)) == pytest.approx(-0.2, abs=1e-12)


def test_perturb_sign_flip_rejected(hotelling_map):
    # det = -1 + 2 s p1 q1 vanishes on p1 q1 = 1 for s = 0.5
    with pytest.raises(TransversalityError):
        perturb(hotelling_map, "-p1*q1", 0.5)


def test_perturb_negative_size(hotelling_map):
    with pytest.raises(ValueError):
        perturb(hotelling_map, "p1*q1", -0.1)


def test_perturb_grid_web_matches_closed_form():
    box = Rect(0.7, 1.35, 0.7, 1.35)
    q2 = sample_to_grid(ClosedFormField(HOTELLING_Q2, ("q1", "p1")), box, 65)
    p2 = sample_to_grid(ClosedFormField(HOTELLING_P2, ("q1", "p1")), box, 65)
    grid = perturb(web2.map_web(q2, p2, PRICE_BOX), "p1*q1", 0.1)
    closed = perturb(web2.map_web(HOTELLING_Q2, HOTELLING_P2, PRICE_BOX), "p1*q1", 0.1)
    for p in PRICE_BOX.inset(0.2).probe_grid(3):
        assert web2.lagrangian_residual(grid, p) == pytest.approx(web2.lagrangian_residual(closed, p), abs=1e-5)


def _shrinking_check(hotelling_map, bump):
    base = web2.audit(hotelling_map)
    reports = [web2.audit(perturb(hotelling_map, bump, s)) for s in (0.1, 0.05, 0.025)]
    for fam in ("lagrangian", "samuelson", "taylor", "area_ratio"):
        dists = [abs(r.verdicts[fam]["max"] - base.verdicts[fam]["max"]) for r in reports]
        assert dists[0] > dists[1] > dists[2], fam
    # the hexagon gap may sit at round-off level for every size
    hexes = [abs(r.verdicts["hexagon"]["max"]) for r in reports]
    for big, small in zip(hexes, hexes[1:]):
        assert small <= max(big, 1e-12)


def test_perturbation_shrinks_with_size(hotelling_map):
    _shrinking_check(hotelling_map, "p1*q1")


@pytest.mark.xfail(
    strict=True,
    reason="the area-ratio deviation of this bump peaks near size 0.05 before falling to zero",
)
def test_perturbation_shrinks_with_size_nontrivial_bump(hotelling_map):
    _shrinking_check(hotelling_map, "q1^2+p1*q1")


# ---------------------------------------------------------------- scenario specs


def spec_dict(**kw):
    d = {
        "version": SCHEMA_VERSION,
        "kind": "hotelling",
        "expressions": {"profit": "1/(p1*p2)"},
        "rectangle": {"p1": [0.8, 1.25], "q1": [0.8, 1.25]},
    }
    d.update(kw)
    return d


def test_spec_hotelling_builds():
    w = ScenarioSpec.from_dict(spec_dict()).build()
    assert w.kind == "hotelling"
    assert web2.jacobian_density(w, (1.0, 1.0)) == pytest.approx(-1.0, abs=1e-10)


def test_spec_perturbed(tmp_path):
    d = spec_dict(kind="perturbed", perturbation={"bump": "p1*q1", "size": 0.1})
    path = tmp_path / "s.json"
    path.write_text(json.dumps(d))
    w = load_scenario(path)
    assert web2.lagrangian_residual(w, (1.0, 1.0)) == pytest.approx(-0.2, abs=1e-9)


def test_spec_rejects_bad_version():
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(spec_dict(version=99))


def test_spec_rejects_unknown_kind():
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(spec_dict(kind="mystery"))


def test_spec_rejects_missing_expressions():
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(spec_dict(expressions={}))


def test_spec_rejects_missing_perturbation():
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(spec_dict(kind="perturbed"))


def test_spec_rejects_bad_rectangle():
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(spec_dict(rectangle={"p1": [0.8, 1.25]}))


def test_spec_bad_expression_is_scenario_error():
    spec = ScenarioSpec.from_dict(spec_dict(kind="map-web", expressions={"q2": "q1*(", "p2": "p1"}))
    with pytest.raises(ScenarioError):
        spec.build()


def test_spec_unreadable_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioError):
        ScenarioSpec.load(path)


def test_spec_round_trips_through_dict():
    d = spec_dict(kind="perturbed", perturbation={"bump": "p1*q1", "size": 0.1}, seed=3)
    assert ScenarioSpec.from_dict(d).as_dict() == d


def test_spec_symmetric_utility():
    d = {
        "version": SCHEMA_VERSION,
        "kind": "separable-utility",
        "expressions": {"u1": "ln(x)", "u2": "y", "psi": "t"},
        "rectangle": {"x": [1.0, 2.0], "y": [1.0, 2.0]},
        "options": {"symmetric": True},
    }
    sf = ScenarioSpec.from_dict(d).build()
    assert sf.field.value(1.5, 1.7) == pytest.approx(math.log(1.5) + math.log(1.7), rel=1e-14)


def test_spec_seeded_separable():
    d = {
        "version": SCHEMA_VERSION,
        "kind": "separable-utility",
        "expressions": {},
        "rectangle": {"x": [0.5, 1.5], "y": [0.5, 1.5]},
        "seed": 7,
    }
    sf = ScenarioSpec.from_dict(d).build()
    assert sf.description == random_separable(7).description


# ---------------------------------------------------------------- export / import


def test_export_import_closed_form(tmp_path, hotelling_map):
    export_web(hotelling_map, tmp_path / "w")
    back = import_web(tmp_path / "w")
    assert statuses(web2.audit(back)) == statuses(web2.audit(hotelling_map))


def test_export_import_implicit(tmp_path, hotelling_web):
    export_web(hotelling_web, tmp_path / "w")
    back = import_web(tmp_path / "w")
    for p in PRICE_BOX.probe_grid(3):
        a = web2.induced_map(back, p)
        b = web2.induced_map(hotelling_web, p)
        assert (a.p2, a.q2, a.det) == (b.p2, b.q2, b.det)


def test_export_import_grid_bit_exact(tmp_path):
    box = Rect(0.7, 1.35, 0.7, 1.35)
    q2 = sample_to_grid(ClosedFormField(HOTELLING_Q2, ("q1", "p1")), box, 65)
    p2 = sample_to_grid(ClosedFormField(HOTELLING_P2, ("q1", "p1")), box, 65)
    w = web2.map_web(q2, p2, PRICE_BOX)
    export_web(w, tmp_path / "g")
    back = import_web(tmp_path / "g")
    assert np.max(np.abs(back.q2_field.values - w.q2_field.values)) == 0.0
    assert np.array_equal(back.p2_field.values, w.p2_field.values)


def test_import_truncated_manifest(tmp_path, hotelling_map):
    d = export_web(hotelling_map, tmp_path / "w")
    text = (d / "manifest.json").read_text()
    (d / "manifest.json").write_text(text[: len(text) // 2])
    with pytest.raises(ScenarioError):
        import_web(d)


def test_import_version_mismatch(tmp_path, hotelling_map):
    d = export_web(hotelling_map, tmp_path / "w")
    m = json.loads((d / "manifest.json").read_text())
    m["version"] = SCHEMA_VERSION + 1
    (d / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ScenarioError):
        import_web(d)


def test_import_missing_directory(tmp_path):
    with pytest.raises(ScenarioError):
        import_web(tmp_path / "absent")


def test_import_missing_grid_file(tmp_path):
    box = Rect(0.7, 1.35, 0.7, 1.35)
    q2 = sample_to_grid(ClosedFormField(HOTELLING_Q2, ("q1", "p1")), box, 17)
    p2 = sample_to_grid(ClosedFormField(HOTELLING_P2, ("q1", "p1")), box, 17)
    d = export_web(web2.map_web(q2, p2, PRICE_BOX), tmp_path / "g")
    (d / "p2.csv").unlink()
    with pytest.raises(ScenarioError):
        import_web(d)
