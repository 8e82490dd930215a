import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ramp2h_prices, two_variable_response
from nodalprice import (NonsmoothPointError, SingularBorderedHessianError, assemble_problem, builtin_scenario,
                        markup, response_matrix_fd, response_matrix_kkt, response_matrix_projection,
                        value_function, value_gradient_fd)
from nodalprice.propositions import firm_dispatch
from nodalprice.sensitivity import ResponseMatrix, default_step

RAMP = np.array([[-0.5, 0.5], [0.5, -0.5]])


@pytest.fixture(scope="module")
def ramp2h():
    return assemble_problem(builtin_scenario("ramp2h"))


@pytest.mark.parametrize("route", [response_matrix_kkt, response_matrix_projection, response_matrix_fd])
def test_ramp2h_all_routes(ramp2h, route):
    M = route(ramp2h, [0.5, 0.25])
    assert M.labels == ["n1@1", "n1@2"]
    np.testing.assert_allclose(M.values, RAMP, atol=1e-8)


def test_ramp2h_matches_closed_form_difference(ramp2h):
    # the closed-form prices are linear in x, so any difference quotient is exact
    h = 0.1
    base = np.array([0.5, 0.25])
    cols = [(ramp2h_prices(base + h * e)[0] - ramp2h_prices(base - h * e)[0]) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(np.array(cols).T, response_matrix_kkt(ramp2h, base).values, atol=1e-12)


def test_projection_parts_add_up():
    problem = assemble_problem(builtin_scenario("loss2"))
    x, _ = firm_dispatch(problem)
    M = response_matrix_projection(problem, x)
    np.testing.assert_allclose(M.parts["objective"] + M.parts["constraints"], M.values, atol=1e-12)
    assert abs(M.parts["constraints"][0, 0]) > 1e-3  # losses contribute curvature
    np.testing.assert_allclose(M.values, response_matrix_kkt(problem, x).values, atol=1e-9)
    np.testing.assert_allclose(M.values, response_matrix_fd(problem, x).values, atol=1e-4)


def test_projection_parts_linear_case(ramp2h):
    M = response_matrix_projection(ramp2h, [0.5, 0.25])
    np.testing.assert_allclose(M.parts["constraints"], 0.0, atol=1e-15)


def test_single_node_linear():
    problem = assemble_problem(builtin_scenario("single-node-linear"))
    # fixed load: the rival's marginal cost slope alone sets the response
    assert response_matrix_kkt(problem, [5.0]).values[0, 0] == pytest.approx(-0.1, abs=1e-12)


def test_single_node_elastic_two_variable_oracle():
    problem = assemble_problem(builtin_scenario("single-node-elastic"))
    expected = two_variable_response(0.1, 0.2)
    for route in (response_matrix_kkt, response_matrix_projection, response_matrix_fd):
        assert route(problem, [5.0]).values[0, 0] == pytest.approx(expected, abs=1e-8)


def test_dc3_constant_inside_region():
    problem = assemble_problem(builtin_scenario("dc3"))
    a = response_matrix_kkt(problem, [69.0]).values
    b = response_matrix_kkt(problem, [60.0]).values
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a[0, 0] == pytest.approx(-0.0625, abs=1e-12)


def test_value_function_and_envelope(ramp2h):
    assert value_function(ramp2h, [0.0, 0.0]) == pytest.approx(105.0, abs=1e-9)
    g = value_gradient_fd(ramp2h, [0.5, 0.25])
    np.testing.assert_allclose(g, [8.875, 13.125], atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_envelope_identity_ramp2h(x1, x2):
    problem = assemble_problem(builtin_scenario("ramp2h"))
    g = value_gradient_fd(problem, [x1, x2])
    np.testing.assert_allclose(g, ramp2h_prices((x1, x2))[0], atol=1e-5)


def test_nonsmooth_point_detected(ramp2h):
    # the rival's hour-1 output reaches zero exactly at x2 = 5.5
    with pytest.raises(NonsmoothPointError) as info:
        response_matrix_fd(ramp2h, [0.5, 5.5])
    assert "limit:S@1:lo" in set(info.value.removed) | set(info.value.added)


def test_singular_bordered_hessian():
    problem = assemble_problem(builtin_scenario("marginal-firm"))
    with pytest.raises(SingularBorderedHessianError) as info:
        response_matrix_kkt(problem, [5.0])
    assert info.value.smallest_singular_value < 1e-10


def test_default_step():
    assert default_step([0.5, 0.25]) == 1e-5
    assert default_step([200.0]) == pytest.approx(2e-3)


def test_markup(ramp2h):
    M = response_matrix_kkt(ramp2h, [0.5, 0.25])
    assert markup(M.values, [0.5, 0.25]) == pytest.approx(0.03125, abs=1e-12)
    with pytest.raises(ValueError, match="dimension"):
        markup(M.values, [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_markup_nonnegative_for_nsd(x):
    assert markup(RAMP, x) >= -1e-10


def test_response_matrix_validation_and_export():
    with pytest.raises(ValueError):
        ResponseMatrix(["a"], [[1.0, 2.0]], "kkt")
    with pytest.raises(ValueError):
        ResponseMatrix([], np.zeros((0, 0)), "kkt")
    with pytest.raises(ValueError):
        ResponseMatrix(["a"], [[np.nan]], "kkt")
    M = ResponseMatrix(["n1@1", "n1@2"], RAMP, "kkt")
    assert M.to_csv().splitlines()[0] == ",n1@1,n1@2"
    assert json.loads(M.to_json())["values"] == RAMP.tolist()
    np.testing.assert_array_equal(np.asarray(M), RAMP)
