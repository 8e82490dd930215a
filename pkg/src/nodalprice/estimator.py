"""scikit-learn style facade: fit on a scenario, predict firm-node prices."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .model import Scenario, assemble_problem, parse_scenario, scenario_from_dict
from .propositions import check_prop1, firm_dispatch
from .scenarios import BUILTINS, builtin_scenario
from .sensitivity import firm_price_vector, markup, response_matrix_kkt, response_matrix_projection
from .solver import SolverOptions


def _as_scenario(scenario) -> Scenario:
    if isinstance(scenario, Scenario):
        return scenario
    if isinstance(scenario, dict):
        return scenario_from_dict(scenario)
    if isinstance(scenario, str) and scenario in BUILTINS:
        return builtin_scenario(scenario)
    if isinstance(scenario, str):
        return parse_scenario(scenario)
    raise TypeError(f"cannot build a scenario from {type(scenario).__name__}")


class NodalPriceResponse(BaseEstimator):
    """Price response of one firm's nodes to its own injections.

    ``fit`` clears the market, anchors at the firm's dispatch (or a given
    ``x``), runs the condition checks and computes the response matrix.
    ``predict`` re-clears the residual market for each row of firm
    injections and returns the prices at the firm's nodes.

    Parameters
    ----------
    route : {"kkt", "projection"}
        Analytic route used for ``response_matrix_``.
    check : bool
        Run the sufficient-condition checks during ``fit``.
    tol, act_tol : float
        Solver tolerances.

    Attributes
    ----------
    labels_ : list of str
        Firm slots as ``node@hour``.
    x_ : ndarray
        Anchor injections.
    prices_ : ndarray
        Firm-node prices at ``x_``.
    response_matrix_ : ndarray
    report_ : PropositionReport or None
    """

    def __init__(self, route="kkt", check=True, tol=1e-9, act_tol=1e-7):
        self.route = route
        self.check = check
        self.tol = tol
        self.act_tol = act_tol

    def _options(self):
        return SolverOptions(tol=self.tol, act_tol=self.act_tol)

    def fit(self, scenario, x=None):
        """Anchor the estimator on ``scenario`` (Scenario, dict, JSON text or builtin name)."""
        if self.route not in ("kkt", "projection"):
            raise ValueError(f"route must be 'kkt' or 'projection', got {self.route!r}")
        opts = self._options()
        self.problem_ = assemble_problem(_as_scenario(scenario))
        if x is None:
            x, _ = firm_dispatch(self.problem_, opts)
        self.x_ = np.atleast_1d(np.asarray(x, dtype=float))
        self.report_ = check_prop1(self.problem_, self.x_, options=opts) if self.check else None
        route = response_matrix_kkt if self.route == "kkt" else response_matrix_projection
        M = route(self.problem_, self.x_, (), opts)
        self.labels_ = M.labels
        self.response_matrix_ = M.values
        self.prices_ = firm_price_vector(self.problem_, self.x_, (), opts)
        self.n_features_in_ = len(self.labels_)
        return self

    def predict(self, X):
        """Firm-node prices for each row of injections, shape ``(n_samples, k)``."""
        check_is_fitted(self, "response_matrix_")
        X = check_array(X, ensure_2d=False)
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} firm injections per row, got {X.shape[1]}")
        opts = self._options()
        return np.array([firm_price_vector(self.problem_, row, (), opts) for row in X])

    def predict_linear(self, X):
        """First-order price prediction ``prices_ + M (x - x_)``."""
        check_is_fitted(self, "response_matrix_")
        X = np.atleast_2d(check_array(X, ensure_2d=False))
        return self.prices_ + (X - self.x_) @ self.response_matrix_.T

    def markup(self, x=None):
        """``-x'Mx`` at ``x`` (default: the anchor)."""
        check_is_fitted(self, "response_matrix_")
        return markup(self.response_matrix_, self.x_ if x is None else x)
