import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import count_inequalities, enumerate_kkt, ramp2h_prices
from nodalprice import (InfeasibleError, MarginalOfferError, assemble_problem, binding_set, builtin_scenario,
                        lmp_table, random_scenario, scenario_from_dict, solve, solve_subproblem)
from nodalprice.scenarios import builtin_document
from nodalprice.solver import active_set_qp, build_subproblem, firm_prices, kkt_residual

LINEAR = ["ramp2h", "ramp2h-capped", "single-node-linear", "single-node-elastic", "dc3", "marginal-firm",
          "firm-ramp"]


@pytest.mark.parametrize("name", LINEAR + ["loss2"])
def test_full_solve_matches_enumeration(name):
    problem = assemble_problem(builtin_scenario(name))
    sol = solve(problem)
    z, mult, obj = enumerate_kkt(problem)
    assert sol.ok
    np.testing.assert_allclose(sol.z, z, atol=1e-9)
    np.testing.assert_allclose(sol.multipliers, mult, atol=1e-9)
    assert sol.objective == pytest.approx(obj, abs=1e-9)


@pytest.mark.parametrize("name", ["ramp2h", "single-node-linear", "dc3"])
def test_subproblem_matches_enumeration(name):
    problem = assemble_problem(builtin_scenario(name))
    x = solve(problem).z[problem.firm_index] * 0.5
    sol, W, sub = solve_subproblem(problem, x)
    z, mult, obj = enumerate_kkt(sub.problem)
    np.testing.assert_allclose(sol.z, z, atol=1e-9)
    np.testing.assert_allclose(sol.multipliers, mult, atol=1e-9)
    assert W == pytest.approx(obj, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5_000))
def test_random_solves_match_enumeration(seed):
    problem = assemble_problem(random_scenario(seed))
    if count_inequalities(problem) > 12:
        sub = build_subproblem(problem, solve(problem).z[problem.firm_index])
        problem = sub.problem
    if count_inequalities(problem) > 12:
        return
    sol = solve(problem)
    z, mult, obj = enumerate_kkt(problem)
    assert sol.objective == pytest.approx(obj, abs=1e-8 * max(1.0, abs(obj)))
    np.testing.assert_allclose(sol.z, z, atol=1e-7)


def test_ramp2h_golden_dispatch():
    problem = assemble_problem(builtin_scenario("ramp2h"))
    sol, W, sub = solve_subproblem(problem, [0.5, 0.25])
    prices, ref = ramp2h_prices((0.5, 0.25))
    assert sol.value("q[D@1]") == pytest.approx(3.125, abs=1e-10)
    assert sol.value("q[D@2]") == pytest.approx(10.875, abs=1e-10)
    assert sol.value("q[S@1]") == pytest.approx(2.625, abs=1e-10)
    assert sol.value("q[S@2]") == pytest.approx(10.625, abs=1e-10)
    np.testing.assert_allclose(firm_prices(sol, sub), prices, atol=1e-10)
    np.testing.assert_allclose(firm_prices(sol, sub), [8.875, 13.125], atol=1e-10)
    assert sol.multiplier("ramp:S@1:up") == pytest.approx(ref["mu"], abs=1e-10)


def test_ramp2h_value_at_origin():
    # residual welfare with no firm injection: demand 3 and 11, rival 3 and 11
    problem = assemble_problem(builtin_scenario("ramp2h"))
    _, W, _ = solve_subproblem(problem, [0.0, 0.0])
    assert W == pytest.approx(105.0, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_ramp2h_prices_closed_form(x1, x2):
    problem = assemble_problem(builtin_scenario("ramp2h"))
    sol, _, sub = solve_subproblem(problem, [x1, x2])
    np.testing.assert_allclose(firm_prices(sol, sub), [9 + (x2 - x1) / 2, 13 + (x1 - x2) / 2], atol=1e-9)


def test_full_ramp2h_firm_at_capacity():
    problem = assemble_problem(builtin_scenario("ramp2h"))
    sol = solve(problem)
    np.testing.assert_allclose(sol.z[problem.firm_index], [1.0, 1.0], atol=1e-10)
    table = lmp_table(sol)
    assert table[("n1", 1)] == pytest.approx(9.0)
    assert table[("n1", 2)] == pytest.approx(13.0)


def test_single_node_linear_price():
    problem = assemble_problem(builtin_scenario("single-node-linear"))
    sol, _, sub = solve_subproblem(problem, [0.0])
    assert firm_prices(sol, sub)[0] == pytest.approx(2.0)


def test_dc3_congestion():
    problem = assemble_problem(builtin_scenario("dc3"))
    sol = solve(problem)
    table = lmp_table(sol)
    bs = binding_set(problem, sol)
    assert "flow:B-C@1:fwd" in {str(t) for t in bs.tags}
    # with one congested line, prices differ across all three nodes
    assert len({round(v, 6) for v in table.values()}) == 3
    # flow-weighted price differences: theta-stationarity ties the three prices
    assert table[("A", 1)] == pytest.approx(16.923076923, abs=1e-8)


def test_kkt_residuals_small():
    for name in LINEAR + ["loss2"]:
        problem = assemble_problem(builtin_scenario(name))
        sol = solve(problem)
        res = kkt_residual(problem, sol.z, sol.multipliers)
        assert max(res.values()) <= 1e-8, (name, res)


def test_loss_case_converges_and_is_local():
    problem = assemble_problem(builtin_scenario("loss2"))
    sol = solve(problem)
    assert sol.ok and sol.local_only
    table = lmp_table(sol)
    # losses make the importing node dearer
    assert table[("B", 1)] > table[("A", 1)]


def test_infeasible_reports_violation():
    doc = builtin_document("single-node-linear")
    doc["units"][0].update({"pmin": 500, "pmax": 500})
    sol = solve(assemble_problem(scenario_from_dict(doc)))
    assert sol.status == "infeasible"
    assert sol.violation == pytest.approx(500 - 205, rel=1e-6)


def test_subproblem_infeasible_raises():
    problem = assemble_problem(builtin_scenario("marginal-firm"))
    with pytest.raises(InfeasibleError):
        solve_subproblem(problem, [1.0])


def test_dispatch_on_breakpoint_is_rejected():
    doc = builtin_document("single-node-linear")
    doc["units"][0].update({"pmin": 55, "pmax": 55})
    doc["units"][1].update({"bid": [[0, 1.0, 0.1], [50, 6.0, 0.1]], "segment": 0})
    with pytest.raises(MarginalOfferError) as info:
        solve(assemble_problem(scenario_from_dict(doc)))
    assert any("seg-hi" in str(t) for t in info.value.tags)


def test_active_set_qp_small():
    # max -(z0^2 + z1^2)/2 + z0 + z1 s.t. z0 + z1 <= 1
    G = np.eye(2)
    c = -np.ones(2)
    z, lam_e, lam_i, _, _ = active_set_qp(G, c, np.zeros((0, 2)), np.zeros(0), np.array([[1.0, 1.0]]),
                                       np.array([1.0]), np.zeros(2))
    np.testing.assert_allclose(z, [0.5, 0.5], atol=1e-12)
    assert lam_i[0] == pytest.approx(0.5)


def test_solution_json_round_trip():
    import json
    sol = solve(assemble_problem(builtin_scenario("dc3")))
    doc = json.loads(sol.to_json())
    assert doc["status"] == "optimal"
    assert doc["multipliers"]["balance:A@1"] == pytest.approx(16.923076923, abs=1e-8)
