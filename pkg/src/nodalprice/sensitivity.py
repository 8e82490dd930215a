"""Nodal price response matrix, residual value function and markup.

The response matrix ``M[i, j] = d lambda_i / d x_j`` is computed three ways:

``kkt``
    Differentiate the first-order system on the binding set: one solve of
    the bordered Hessian per firm injection.
``projection``
    ``M = V' (D^2 L) V`` with ``V = dv/dx`` from the same solves; also split
    into an objective-Hessian term and a constraint-curvature term.
``finite-difference``
    Central differences of the subproblem prices, refusing to difference
    across a change of binding set.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NonsmoothPointError, SingularBorderedHessianError
from .model import Problem
from .solver import (DEFAULT_OPTIONS, SolverOptions, Subproblem, binding_set, firm_prices,
                     solve_subproblem)


@dataclass
class ResponseMatrix:
    labels: list
    values: np.ndarray
    route: str  # kkt | projection | finite-difference
    parts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        n = len(self.labels)
        if n == 0 or self.values.shape != (n, n):
            raise ValueError(f"response matrix must be square over a nonempty index set, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("response matrix has non-finite entries")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def to_dict(self):
        return {"route": self.route, "labels": list(self.labels), "values": self.values.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.labels))
        for lab, row in zip(self.labels, self.values):
            w.writerow([lab] + [repr(float(v)) for v in row])
        return buf.getvalue()


@dataclass
class _Derivatives:
    sub: Subproblem
    rows: tuple
    dv: np.ndarray  # (n_free, k)
    dmu: np.ndarray  # (n_rows, k)
    hess_objective: np.ndarray
    hess_lagrangian: np.ndarray
    curvature: list  # (multiplier, Q) for binding rows with Q


def lagrangian_hessian(problem: Problem, multipliers, rows=None):
    """Hessian of ``U - sum(L_m g_m)`` (maximization form)."""
    H = problem.P.copy()
    idx = range(problem.m) if rows is None else rows
    for i in idx:
        Q = problem.constraints[i].Q
        if Q is not None:
            H -= multipliers[i] * Q
    return H


def bordered_hessian(H, J):
    k = J.shape[0]
    return np.block([[H, J.T], [J, np.zeros((k, k))]])


def _derivatives(problem, x, hat, options) -> _Derivatives:
    sol, _, sub = solve_subproblem(problem, x, hat, options)
    red = sub.problem
    bs = binding_set(red, sol, options.act_tol)
    rows = bs.indices
    J = red.jacobian(sol.z)[list(rows)]
    HL = lagrangian_hessian(red, sol.multipliers, rows)
    K = bordered_hessian(HL, J)
    s = np.linalg.svd(K, compute_uv=False)
    if s[-1] <= 1e-12 * max(1.0, s[0]):
        raise SingularBorderedHessianError("bordered Hessian is singular", float(s[-1]))
    n = red.n
    dC = sub.parameter_jacobian(sol.z)[list(rows)]  # (rows, k)
    rhs = np.vstack([np.zeros((n, dC.shape[1])), -dC])
    step = np.linalg.solve(K, rhs)
    dv = step[:n]
    dmu = -step[n:]
    curvature = [(sol.multipliers[i], red.constraints[i].Q) for i in rows if red.constraints[i].Q is not None]
    return _Derivatives(sub, tuple(rows), dv, dmu, red.P, HL, curvature)


def _price_rows(d: _Derivatives):
    pos = {r: k for k, r in enumerate(d.rows)}
    return [pos[r] for r in d.sub.balance_rows]


def response_matrix_kkt(problem: Problem, x, hat=(), options: SolverOptions = DEFAULT_OPTIONS) -> ResponseMatrix:
    """Price response by differentiating the binding first-order system.

    Raises
    ------
    SingularBorderedHessianError
        When the bordered Hessian of the binding set is not invertible.
    """
    d = _derivatives(problem, x, hat, options)
    M = d.dmu[_price_rows(d)]
    return ResponseMatrix(d.sub.labels, M, "kkt")


def response_matrix_projection(problem: Problem, x, hat=(), options: SolverOptions = DEFAULT_OPTIONS) -> ResponseMatrix:
    """Price response as ``V' (D^2 L) V`` with ``V`` the dispatch sensitivities.

    ``parts`` holds ``objective`` (``V' D^2 U V``) and ``constraints``
    (``-sum L_m V' Q_m V``) which add up to the returned matrix.
    """
    d = _derivatives(problem, x, hat, options)
    V = d.dv
    M = V.T @ d.hess_lagrangian @ V
    obj = V.T @ d.hess_objective @ V
    con = np.zeros_like(obj)
    for mu, Q in d.curvature:
        con -= mu * (V.T @ Q @ V)
    return ResponseMatrix(d.sub.labels, M, "projection", {"objective": obj, "constraints": con})


def default_step(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return 1e-5 * max(1.0, np.abs(x).max(initial=0.0))


def _probe(problem, x, hat, options):
    sol, W, sub = solve_subproblem(problem, x, hat, options)
    return sol, W, sub, binding_set(sub.problem, sol, options.act_tol).tag_set()


def _check_same(base, other, where):
    if base != other:
        added = sorted(map(str, other - base))
        removed = sorted(map(str, base - other))
        raise NonsmoothPointError(
            f"binding set changes at probe {where}: added {added}, removed {removed}", added, removed)


def _central(problem, x, hat, step, options, fn):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = default_step(x) if step is None else float(step)
    base = _probe(problem, x, hat, options)
    cols = []
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = h
        plus = _probe(problem, x + e, hat, options)
        minus = _probe(problem, x - e, hat, options)
        _check_same(base[3], plus[3], f"+{k}")
        _check_same(base[3], minus[3], f"-{k}")
        cols.append((fn(plus) - fn(minus)) / (2 * h))
    return base, np.array(cols).T


def response_matrix_fd(problem: Problem, x, step=None, hat=(), options: SolverOptions = DEFAULT_OPTIONS) -> ResponseMatrix:
    """Central-difference price response; ``step`` defaults to ``1e-5 max(1, |x|_inf)``.

    Raises
    ------
    NonsmoothPointError
        If any probe has a different binding set from ``x``.
    """
    base, M = _central(problem, x, hat, step, options, lambda pr: firm_prices(pr[0], pr[2]))
    return ResponseMatrix(base[2].labels, np.atleast_2d(M), "finite-difference")


def value_function(problem: Problem, x, hat=(), options: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Optimal residual welfare ``W(x)`` when the firm injects ``x`` at no cost.

    With ``hat`` the free firm variables stay in the optimization and their
    offer cost is subtracted.
    """
    return solve_subproblem(problem, x, hat, options)[1]


def value_gradient_fd(problem: Problem, x, step=None, hat=(), options: SolverOptions = DEFAULT_OPTIONS):
    """Central-difference gradient of :func:`value_function`.

    Should match the firm-node prices at ``x``.
    """
    _, g = _central(problem, x, hat, step, options, lambda pr: np.array(pr[1]))
    return np.ravel(g)


def firm_price_vector(problem: Problem, x, hat=(), options: SolverOptions = DEFAULT_OPTIONS):
    sol, _, sub = solve_subproblem(problem, x, hat, options)
    return firm_prices(sol, sub)


def markup(M, x) -> float:
    """Extra revenue ``-x'Mx`` a price-making firm earns; nonnegative for NSD ``M``."""
    M = np.asarray(M, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if M.ndim != 2 or M.shape != (len(x), len(x)):
        raise ValueError(f"dimension mismatch: M is {M.shape}, x has {len(x)} entries")
    return float(-x @ M @ x)
