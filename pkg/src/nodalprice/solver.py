"""Active-set Newton-KKT solver, binding sets and nodal prices.

Problems with only linear constraints are concave QPs and are solved in a
single primal active-set pass.  Quadratic (loss) constraints are handled by
sequential quadratic programming: each iterate linearizes the constraints,
uses the Lagrangian Hessian from the previous multipliers, and solves the
resulting QP with the same active-set routine until the step vanishes.

Internally everything is a minimization of ``f = -U`` with ``g_m <= 0`` /
``g_m = 0``; the multipliers of that form coincide with those of the
maximization Lagrangian ``U - sum(L_m g_m)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .errors import InfeasibleError, MarginalOfferError, MaxIterationsError
from .model import Problem


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    act_tol: float = 1e-7
    max_iter: int = 500
    max_sqp: int = 60


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class Solution:
    problem: Problem
    z: np.ndarray
    multipliers: np.ndarray
    objective: float
    status: str  # optimal | infeasible | max-iterations
    residuals: dict
    tol: float
    local_only: bool = False
    iterations: int = 0
    working_set: tuple = ()
    violation: float = 0.0

    @property
    def ok(self):
        return self.status == "optimal"

    def value(self, name):
        for i, v in enumerate(self.problem.variables):
            if v.name == name:
                return float(self.z[i])
        raise KeyError(name)

    def multiplier(self, tag):
        return float(self.multipliers[self.problem.index_of(tag)])

    def to_dict(self):
        prob = self.problem
        return {
            "status": self.status,
            "objective": self.objective,
            "local_only": self.local_only,
            "point": {v.name: float(x) for v, x in zip(prob.variables, self.z)},
            "multipliers": {str(c.tag): float(mu) for c, mu in zip(prob.constraints, self.multipliers)},
            "residuals": dict(self.residuals),
            "iterations": self.iterations,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class BindingSet:
    indices: tuple[int, ...]
    labels: dict = field(default_factory=dict)  # index -> C_x | C_y | C_xu | C_yu | C_u
    degenerate: tuple[int, ...] = ()
    tags: tuple = ()

    def __len__(self):
        return len(self.indices)

    def tag_set(self):
        return frozenset(self.tags)

    def by_label(self, label):
        return [i for i in self.indices if self.labels[i] == label]


# ---------------------------------------------------------------------------
# QP core


def _feasible_point(Ae, be, Ai, bi, n):
    """Elastic LP: minimize total violation. Returns (z, violation)."""
    me, mi = len(be), len(bi)
    nv = n + 2 * me + mi
    cost = np.r_[np.zeros(n), np.ones(2 * me + mi)]
    bounds = [(None, None)] * n + [(0, None)] * (2 * me + mi)
    A_eq = b_eq = A_ub = b_ub = None
    if me:
        A_eq = np.hstack([Ae, np.eye(me), -np.eye(me), np.zeros((me, mi))])
        b_eq = be
    if mi:
        A_ub = np.hstack([Ai, np.zeros((mi, 2 * me)), -np.eye(mi)])
        b_ub = bi
    if nv == n:
        return np.zeros(n), 0.0
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleError(f"phase-one LP failed: {res.message}")
    return res.x[:n], float(res.fun)


def _independent(A, row, tol=1e-10):
    if A.shape[0] == 0:
        return np.linalg.norm(row) > tol
    s_old = np.linalg.svd(A, compute_uv=False)
    s_new = np.linalg.svd(np.vstack([A, row]), compute_uv=False)
    scale = max(1.0, s_new[0])
    return np.sum(s_new > tol * scale) > np.sum(s_old > tol * scale)


def active_set_qp(G, c, Ae, be, Ai, bi, z0, tol=1e-9, max_iter=500):
    """Primal active-set method for ``min 1/2 z'Gz + c'z, Ae z = be, Ai z <= bi``.

    ``G`` must be positive semidefinite and ``z0`` feasible.  Steps are
    computed in the null space of the working set; zero-curvature descent
    directions run to the nearest blocking constraint.  Blocking ties go to
    the lowest index, and the most negative multiplier is released first.

    Returns
    -------
    z, mu_e, mu_i, working, iterations
    """
    n = len(z0)
    z = np.array(z0, dtype=float)
    me = len(be)
    slack = bi - Ai @ z
    Aw = Ae.copy()
    working = []
    for j in np.argsort(np.abs(slack), kind="stable"):
        if abs(slack[j]) <= 1e-9 * max(1.0, np.abs(Ai[j]).max()) and _independent(Aw, Ai[j]):
            working.append(int(j))
            Aw = np.vstack([Aw, Ai[j]])
    working.sort()

    for it in range(1, max_iter + 1):
        A = np.vstack([Ae, Ai[working]]) if working else Ae
        g = G @ z + c
        Z = null_space(A) if A.shape[0] else np.eye(n)
        p = np.zeros(n)
        newton = True
        if Z.shape[1]:
            Hr = Z.T @ G @ Z
            gr = Z.T @ g
            w, V = np.linalg.eigh(Hr)
            flat = w <= 1e-10 * max(1.0, np.abs(w).max())
            g_flat = V[:, flat].T @ gr
            if np.abs(g_flat).max(initial=0.0) > 1e-11 * max(1.0, np.abs(g).max()):
                p = -Z @ (V[:, flat] @ g_flat)
                newton = False
            else:
                pos = ~flat
                p = -Z @ (V[:, pos] @ ((V[:, pos].T @ gr) / w[pos]))
        if newton and np.abs(p).max(initial=0.0) <= 1e-13 * max(1.0, np.abs(z).max()):
            mu = np.linalg.lstsq(A.T, -g, rcond=None)[0] if A.shape[0] else np.zeros(0)
            mu_w = mu[me:]
            if len(working) and mu_w.min() < -tol:
                drop = int(np.argmin(mu_w))
                working.pop(drop)
                continue
            mu_i = np.zeros(len(bi))
            mu_i[working] = mu_w
            return z, mu[:me], mu_i, tuple(working), it

        Ap = Ai @ p
        slack = bi - Ai @ z
        alpha = 1.0 if newton else np.inf
        block = None
        in_work = set(working)
        for j in range(len(bi)):
            if j in in_work or Ap[j] <= 1e-14 * max(1.0, np.abs(Ai[j]).max()) * max(1.0, np.abs(p).max()):
                continue
            r = max(slack[j], 0.0) / Ap[j]
            if r < alpha * (1 - 1e-12) or (block is None and r <= alpha):
                alpha, block = r, j
        if not np.isfinite(alpha):
            raise InfeasibleError("objective unbounded along a feasible ray")
        z = z + alpha * p
        if block is not None:
            working.append(block)
            working.sort()
    raise MaxIterationsError(f"active-set QP did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# public API


def kkt_residual(problem: Problem, z, multipliers):
    """Residual norms of the first-order conditions at ``(z, multipliers)``.

    Returns a dict with ``stationarity`` (max-norm of the Lagrangian
    gradient), ``feasibility`` (equality residual / inequality violation),
    ``complementarity`` (max ``|L_m g_m|`` over inequalities) and ``dual``
    (most negative inequality multiplier, as a positive number).
    """
    z = np.asarray(z, dtype=float)
    mu = np.asarray(multipliers, dtype=float)
    vals = problem.values(z)
    J = problem.jacobian(z)
    grad = problem.objective_gradient(z) - J.T @ mu if problem.m else problem.objective_gradient(z)
    eq = np.array([c.relation == "eq" for c in problem.constraints], dtype=bool)
    feas = np.r_[np.abs(vals[eq]), np.maximum(vals[~eq], 0.0)]
    return {
        "stationarity": float(np.abs(grad).max(initial=0.0)),
        "feasibility": float(feas.max(initial=0.0)),
        "complementarity": float(np.abs(mu[~eq] * vals[~eq]).max(initial=0.0)),
        "dual": float(np.maximum(-mu[~eq], 0.0).max(initial=0.0)),
    }


def _split(problem, z):
    eq = [i for i, c in enumerate(problem.constraints) if c.relation == "eq"]
    le = [i for i, c in enumerate(problem.constraints) if c.relation == "le"]
    vals = problem.values(z)
    J = problem.jacobian(z)
    # linearization g(z) + J (z' - z): J z' (<=|=) J z - g(z)
    rhs = J @ z - vals if problem.m else np.zeros(0)
    return eq, le, J, rhs


def solve(problem: Problem, options: SolverOptions = DEFAULT_OPTIONS) -> Solution:
    """Maximize the problem's welfare objective.

    Returns a :class:`Solution` whose status is ``optimal``, ``infeasible``
    (``violation`` holds the minimum total constraint violation) or
    ``max-iterations`` (best iterate attached).

    Raises
    ------
    MarginalOfferError
        If the optimum sits on an interior bid breakpoint.
    """
    n, m = problem.n, problem.m
    nonlinear = any(c.Q is not None for c in problem.constraints)
    z = np.zeros(n)
    mu = np.zeros(m)
    status = "max-iterations"
    iterations = 0
    working = ()
    for k in range(options.max_sqp if nonlinear else 1):
        eq, le, J, rhs = _split(problem, z)
        H = -problem.P.copy()
        for i, rec in enumerate(problem.constraints):
            if rec.Q is not None and mu[i] != 0.0:
                H += mu[i] * rec.Q
        cvec = -problem.objective_gradient(z) - H @ z
        Ae, be, Ai, bi = J[eq], rhs[eq], J[le], rhs[le]
        z0, violation = _feasible_point(Ae, be, Ai, bi, n)
        if violation > options.tol * max(1.0, np.abs(rhs).max(initial=0.0)):
            sol = Solution(problem, z0, np.zeros(m), problem.objective(z0), "infeasible",
                           kkt_residual(problem, z0, np.zeros(m)), options.tol,
                           problem.local_only, iterations, (), violation)
            return sol
        try:
            z_new, mu_e, mu_i, wk, its = active_set_qp(H, cvec, Ae, be, Ai, bi, z0,
                                                       options.tol, options.max_iter)
        except MaxIterationsError:
            break
        iterations += its
        mu = np.zeros(m)
        mu[eq] = mu_e
        mu[le] = mu_i
        working = tuple(sorted(eq + [le[j] for j in wk]))
        step = np.abs(z_new - z).max(initial=0.0)
        z = z_new
        if not nonlinear or step <= 1e-12 * max(1.0, np.abs(z).max()):
            status = "optimal"
            break
    res = kkt_residual(problem, z, mu)
    if status == "optimal" and max(res.values()) > 1e3 * options.tol:
        status = "max-iterations"
    sol = Solution(problem, z, mu, problem.objective(z), status, res, options.tol,
                   problem.local_only, iterations, working)
    if sol.ok:
        vals = problem.values(z)
        on_break = [c.tag for c, v in zip(problem.constraints, vals)
                    if c.tag.detail in ("seg-lo", "seg-hi") and _scaled(c, v, z) <= options.act_tol]
        if on_break:
            raise MarginalOfferError(
                "dispatch lands on a bid breakpoint (marginal offer): " + ", ".join(map(str, on_break)),
                on_break)
    return sol


def _scaled(rec, value, z):
    return abs(value) / max(1.0, np.abs(rec.gradient(z)).max())


def binding_set(problem: Problem, sol: Solution, act_tol: float = DEFAULT_OPTIONS.act_tol) -> BindingSet:
    """Equalities plus inequalities active within ``act_tol`` (scaled by gradient size)."""
    vals = problem.values(sol.z)
    idx, degenerate = [], []
    for i, (rec, v) in enumerate(zip(problem.constraints, vals)):
        if rec.relation == "eq":
            idx.append(i)
        elif _scaled(rec, v, sol.z) <= act_tol:
            idx.append(i)
            if abs(sol.multipliers[i]) <= sol.tol * max(1.0, np.abs(sol.multipliers).max(initial=0.0)):
                degenerate.append(i)
    labels = {i: problem.label(problem.constraints[i]) for i in idx}
    tags = tuple(problem.constraints[i].tag for i in idx)
    return BindingSet(tuple(idx), labels, tuple(degenerate), tags)


def lmp_table(sol: Solution) -> dict:
    """Nodal prices ``{(node, hour): $/MWh}`` from the balance multipliers."""
    out = {}
    for rec, mu in zip(sol.problem.constraints, sol.multipliers):
        if rec.tag.kind == "balance":
            out[(rec.tag.entity, rec.tag.hour)] = float(mu)
    return out


# ---------------------------------------------------------------------------
# the firm's residual subproblem


@dataclass
class Subproblem:
    """Residual problem with the firm's injections on ``param_index`` fixed.

    Attributes
    ----------
    problem : Problem
        Reduced problem over the remaining variables.
    parent : Problem
    param_index : list of int
        Parent indices of the fixed (parameter) injections.
    x : ndarray
        Parameter values.
    free, kept : list of int
        Parent indices of the reduced variables / constraints.
    balance_rows : list of int
        Reduced-constraint index of the balance each parameter enters.
    """

    problem: Problem
    parent: Problem
    param_index: list
    x: np.ndarray
    free: list
    kept: list
    balance_rows: list

    @property
    def labels(self):
        return [f"{self.parent.variables[i].node}@{self.parent.variables[i].hour}" for i in self.param_index]

    def full_point(self, v):
        z = np.zeros(self.parent.n)
        z[self.free] = v
        z[self.param_index] = self.x
        return z

    def parameter_jacobian(self, v):
        """``d g / d x`` for the reduced constraints at reduced point ``v``."""
        z = self.full_point(v)
        out = np.zeros((len(self.kept), len(self.param_index)))
        for r, i in enumerate(self.kept):
            rec = self.parent.constraints[i]
            out[r] = rec.gradient(z)[self.param_index]
        return out


def build_subproblem(problem: Problem, x, hat=()) -> Subproblem:
    """Fix the firm's injections outside ``hat`` at ``x``.

    Variables listed in ``hat`` (parent indices) stay free with their offers
    and unit constraints.  The firm's unit constraints that involve only
    fixed variables are dropped; those mixing fixed and free variables are
    kept with the fixed values substituted.
    """
    hat = set(hat)
    params = [i for i in problem.firm_index if i not in hat]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if len(x) != len(params):
        raise ValueError(f"expected {len(params)} firm injections, got {len(x)}")
    pset = set(params)
    drop = []
    for i, rec in enumerate(problem.constraints):
        if problem.is_firm_constraint(rec):
            touched = set(np.flatnonzero(rec.a)) | (set(np.flatnonzero(rec.Q.any(axis=0))) if rec.Q is not None else set())
            if touched and touched <= pset:
                drop.append(i)
    sub, free, kept = problem.restrict(params, x, drop_constraints=drop, drop_objective=True)
    rows = []
    for i in params:
        v = problem.variables[i]
        tag = ("balance", v.node, v.hour)
        rows.append(next(r for r, rec in enumerate(sub.constraints)
                         if (rec.tag.kind, rec.tag.entity, rec.tag.hour) == tag))
    return Subproblem(sub, problem, params, x, free, kept, rows)


def solve_subproblem(problem: Problem, x, hat=(), options: SolverOptions = DEFAULT_OPTIONS):
    """Solve the residual market with the firm injecting ``x`` at no cost.

    Returns
    -------
    sol : Solution
        Solution of the reduced problem (``sol.problem`` is the reduced problem).
    W : float
        Optimal residual welfare.
    sub : Subproblem

    Raises
    ------
    InfeasibleError
        If no residual dispatch accommodates ``x``.
    """
    sub = build_subproblem(problem, x, hat)
    sol = solve(sub.problem, options)
    if sol.status == "infeasible":
        raise InfeasibleError(f"residual market infeasible for x={[round(float(v), 12) for v in sub.x]}",
                              violation=sol.violation)
    if sol.status != "optimal":
        raise MaxIterationsError("residual market did not converge")
    return sol, sol.objective, sub


def firm_prices(sol: Solution, sub: Subproblem):
    """Prices at the firm's (node, hour) slots, in parameter order."""
    return np.array([sol.multipliers[r] for r in sub.balance_rows])
