import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodalprice import (AssemblyError, ScenarioError, assemble_problem, builtin_names, builtin_scenario,
                        parse_scenario, random_scenario, scenario_from_dict, scenario_to_dict,
                        serialize_scenario, validate_scenario)
from nodalprice.model import BidCurve, Segment
from nodalprice.scenarios import builtin_document, random_scenario_doc


def rules(doc):
    return {v.rule for v in validate_scenario(scenario_from_dict(doc))}


@pytest.mark.parametrize("name", builtin_names())
def test_builtins_are_valid(name):
    assert validate_scenario(builtin_scenario(name)) == []


def test_unknown_builtin():
    with pytest.raises(ScenarioError, match="unknown builtin"):
        builtin_scenario("nope")


def test_syntax_error_reports_line():
    text = '{\n  "hours": 1,\n  "nodes": [\n}'
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert info.value.line == 4


def test_schema_error_reports_field_path():
    doc = builtin_document("single-node-linear")
    doc["units"][1]["pmax"] = "big"
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.entity == "units[1].pmax"


def test_unknown_node_names_the_entity():
    doc = builtin_document("dc3")
    doc["lines"][0]["to"] = "Z"
    with pytest.raises(ScenarioError) as info:
        parse_scenario(json.dumps(doc))
    assert info.value.entity == "Z"


@pytest.mark.parametrize("mutate, rule", [
    (lambda d: d["units"].append(dict(d["units"][0])), "duplicate-id"),
    (lambda d: d["lines"][0].update({"to": "A"}), "self-loop"),
    (lambda d: d["lines"][0].update({"susceptance": -1.0}), "susceptance"),
    (lambda d: d["lines"][1].update({"limit": 0.0}), "flow-limit"),
    (lambda d: d["lines"][0].update({"loss": -0.1}), "loss"),
    (lambda d: d["units"][1].update({"pmin": 300}), "bound-order"),
    (lambda d: d["units"][1].update({"ramp_up": -2}), "negative-ramp"),
    (lambda d: d["units"][1].pop("bid"), "missing-bid"),
    (lambda d: d["units"][1].update({"bid": [[0, 5.0, -0.05]]}), "nonmonotone-bid"),
    (lambda d: d["units"][2].update({"bid": [[0, 60.0, 0.2]]}), "nonmonotone-bid"),
    (lambda d: d["units"][0].update({"kind": "load"}), "firm-unit-kind"),
    (lambda d: d.update({"firm_of_interest": "nobody"}), "firm-of-interest"),
])
def test_validation_rules(mutate, rule):
    doc = builtin_document("dc3")
    mutate(doc)
    assert rule in rules(doc)


def test_breakpoint_order_rule():
    doc = builtin_document("dc3")
    doc["units"][1]["bid"] = [[0, 5.0, 0.05], [0, 6.0, 0.05]]
    assert "breakpoint-order" in rules(doc)


def test_costless_injection_rejects_bid():
    doc = builtin_document("ramp2h")
    doc["units"][2]["bid"] = [[0, 1.0, 0.0]]
    assert "costless-bid" in rules(doc)


def test_two_firm_units_on_one_node_rejected():
    doc = builtin_document("single-node-linear")
    doc["units"].append({"id": "G2", "node": "n1", "kind": "generator", "firm": "g", "pmin": 0, "pmax": 1,
                         "bid": [[0, 1.0, 0.0]]})
    assert "multi-unit-node" in rules(doc)


def test_several_rival_units_share_a_node():
    assert validate_scenario(builtin_scenario("ramp2h")) == []
    assert len({u.node for u in builtin_scenario("ramp2h").units}) == 1


def test_bid_curve_segments():
    curve = BidCurve((Segment(0, 10.0, 0.1), Segment(50, 16.0, 0.2)), "supply")
    assert curve.marginal_price(20) == pytest.approx(12.0)
    assert curve.marginal_price(60) == pytest.approx(18.0)
    assert curve.segment_of(20) == 0 and curve.segment_of(60) == 1
    # integral of the marginal price curve
    assert curve.integral(60) == pytest.approx(10 * 50 + 0.05 * 2500 + 16 * 10 + 0.1 * 100)


def test_ambiguous_segment_needs_a_pin():
    doc = builtin_document("single-node-linear")
    doc["units"][1]["bid"] = [[0, 1.0, 0.1], [50, 6.0, 0.1]]
    with pytest.raises(AssemblyError, match="segment"):
        assemble_problem(scenario_from_dict(doc))
    doc["units"][1]["segment"] = 0
    doc["units"][1]["pmax"] = 200
    problem = assemble_problem(scenario_from_dict(doc))
    assert "limit:S@1:seg-hi" in {str(t) for t in problem.tags()}


def test_assembly_layout_ramp2h():
    problem = assemble_problem(builtin_scenario("ramp2h"))
    names = [v.name for v in problem.variables]
    assert names == ["q[D@1]", "q[D@2]", "q[S@1]", "q[S@2]", "q[G@1]", "q[G@2]"]
    tags = [str(t) for t in problem.tags()]
    assert "ramp:S@1:up" in tags
    assert [t for t in tags if t.startswith("balance")] == ["balance:n1@1", "balance:n1@2"]
    assert problem.firm_labels == ["n1@1", "n1@2"]
    assert not problem.local_only


def test_fixed_load_is_one_equality():
    problem = assemble_problem(builtin_scenario("single-node-linear"))
    tags = {str(t): r.relation for t, r in zip(problem.tags(), problem.constraints)}
    assert tags["limit:D@1:fixed"] == "eq"
    assert "limit:D@1:lo" not in tags


def test_losses_set_local_only_and_curvature():
    problem = assemble_problem(builtin_scenario("loss2"))
    assert problem.local_only
    bal = [r for r in problem.constraints if r.tag.kind == "balance"]
    assert all(r.Q is not None for r in bal)
    np.testing.assert_allclose(bal[0].Q, bal[1].Q)


def test_dc_angles_one_reference_per_hour():
    problem = assemble_problem(builtin_scenario("dc3"))
    assert len(problem.tags("reference")) == 1
    assert sum(v.kind == "theta" for v in problem.variables) == 3


def test_partition_labels():
    problem = assemble_problem(builtin_scenario("dc3"))
    labels = {str(r.tag): problem.label(r) for r in problem.constraints}
    assert labels["limit:GA@1:lo"] == "C_x"
    assert labels["limit:SB@1:hi"] == "C_y"
    assert labels["balance:A@1"] == "C_xu"
    assert labels["balance:B@1"] == "C_yu"
    assert labels["flow:B-C@1:fwd"] == "C_u"
    assert labels["reference:A@1"] == "C_u"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_serialization_round_trip(seed):
    s = random_scenario(seed)
    again = parse_scenario(serialize_scenario(s))
    assert again == s
    assert scenario_to_dict(again) == scenario_to_dict(s)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_random_scenarios_are_valid_and_concave(seed):
    problem = assemble_problem(scenario_from_dict(random_scenario_doc(seed)))
    assert np.linalg.eigvalsh(problem.P).max() <= 1e-12
