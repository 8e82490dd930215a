import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nodalprice import NodalPriceResponse, builtin_scenario
from nodalprice.scenarios import builtin_document


def test_fit_predict_ramp2h():
    est = NodalPriceResponse().fit("ramp2h", [0.5, 0.25])
    np.testing.assert_allclose(est.response_matrix_, [[-0.5, 0.5], [0.5, -0.5]], atol=1e-10)
    np.testing.assert_allclose(est.prices_, [8.875, 13.125], atol=1e-10)
    assert est.report_.guarantee == "symmetry+NSD"
    X = [[0.5, 0.25], [0.9, 0.1]]
    np.testing.assert_allclose(est.predict(X), est.predict_linear(X), atol=1e-9)
    assert est.markup() == pytest.approx(0.03125)


def test_accepts_scenario_objects_and_dicts():
    a = NodalPriceResponse(check=False).fit(builtin_scenario("dc3"))
    b = NodalPriceResponse(check=False).fit(builtin_document("dc3"))
    np.testing.assert_allclose(a.response_matrix_, b.response_matrix_)
    assert a.report_ is None


def test_params_and_clone():
    est = NodalPriceResponse(route="projection", tol=1e-10)
    assert est.get_params() == {"route": "projection", "check": True, "tol": 1e-10, "act_tol": 1e-7}
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(route="kkt")
    assert c.route == "kkt"


def test_not_fitted_and_bad_input():
    with pytest.raises(NotFittedError):
        NodalPriceResponse().predict([[1.0, 1.0]])
    est = NodalPriceResponse(check=False).fit("ramp2h")
    with pytest.raises(ValueError):
        est.predict([[1.0]])
    with pytest.raises(ValueError):
        NodalPriceResponse(route="newton").fit("ramp2h")
