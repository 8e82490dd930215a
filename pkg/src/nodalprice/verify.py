"""Matrix property analysis and cross-route consistency reports."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import InfeasibleError
from .model import Problem
from .sensitivity import (response_matrix_fd, response_matrix_kkt, response_matrix_projection,
                          value_function)
from .solver import DEFAULT_OPTIONS, SolverOptions, firm_prices, solve, solve_subproblem

CLASSES = ("negative-definite", "negative-semidefinite", "indefinite", "positive-semidefinite",
           "positive-definite")


def symmetry_defect(M) -> float:
    """Largest absolute difference between ``M`` and its transpose."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    return float(np.abs(M - M.T).max(initial=0.0))


def symmetrize(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 0.5 * (M + M.T)


def eigen(Msym):
    """Spectrum of a symmetric matrix, eigenvalues in descending order.

    Each eigenvector is normalized and signed so that its first nonzero
    component is positive.

    Returns
    -------
    w : ndarray of shape (n,)
    V : ndarray of shape (n, n)
        Column ``k`` pairs with ``w[k]``.
    """
    S = symmetrize(Msym)
    w, V = np.linalg.eigh(S)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    for k in range(V.shape[1]):
        v = V[:, k]
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if nz.size and v[nz[0]] < 0:
            V[:, k] = -v
    return w, V


def default_definiteness_tol(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 1e-8 * max(1.0, float(np.linalg.norm(M, np.inf)))


def classify_definiteness(M, tol=None) -> str:
    """Class of the symmetrized spectrum with a ``+-tol`` band around zero."""
    tol = default_definiteness_tol(M) if tol is None else tol
    w = np.linalg.eigvalsh(symmetrize(M))
    if np.all(w <= -tol):
        return "negative-definite"
    if np.all(w <= tol):
        return "negative-semidefinite"
    if np.all(w >= tol):
        return "positive-definite"
    if np.all(w >= -tol):
        return "positive-semidefinite"
    return "indefinite"


# ---------------------------------------------------------------------------
# nested search over the firm's injections


def firm_offer_value(problem: Problem, x):
    """The firm's own bid-based welfare ``U_g(x)`` (zero for a costless firm)."""
    idx = problem.firm_index
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = problem.P[np.ix_(idx, idx)]
    return float(0.5 * x @ P @ x + problem.p[idx] @ x + problem.c[idx].sum())


def firm_bounds(problem: Problem):
    s = problem.meta["scenario"]
    out = []
    for i in problem.firm_index:
        v = problem.variables[i]
        u = s.unit(v.unit)
        out.append((u.pmin_at(v.hour), u.pmax_at(v.hour)))
    return out


@dataclass
class NestedResult:
    x: np.ndarray
    objective: float
    full_objective: float
    evaluations: int

    @property
    def gap(self):
        return abs(self.objective - self.full_objective)


def nested_search(problem: Problem, grid=11, options: SolverOptions = DEFAULT_OPTIONS) -> NestedResult:
    """Maximize ``W(x) + U_g(x)`` over the firm's box by grid search plus L-BFGS-B.

    The refine step uses the firm-node prices minus the firm's marginal
    offer as the gradient.  The result should match the full market
    objective.
    """
    bounds = firm_bounds(problem)
    idx = problem.firm_index
    P = problem.P[np.ix_(idx, idx)]
    pf = problem.p[idx]
    count = 0

    def outer(x):
        nonlocal count
        count += 1
        sol, W, sub = solve_subproblem(problem, x, (), options)
        return W + firm_offer_value(problem, x), firm_prices(sol, sub) + P @ x + pf

    axes = [np.linspace(lo, hi, grid) for lo, hi in bounds]
    best_x, best = None, -np.inf
    for pt in itertools.product(*axes):
        try:
            val, _ = outer(np.array(pt))
        except InfeasibleError:
            continue
        if val > best:
            best_x, best = np.array(pt), val
    if best_x is None:
        raise InfeasibleError("no feasible firm injection on the search grid")

    def neg(x):
        try:
            val, g = outer(x)
        except InfeasibleError:
            return 1e12, np.zeros_like(x)
        return -val, -g

    res = minimize(neg, best_x, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 200})
    x_opt = res.x if -res.fun >= best else best_x
    value = max(-res.fun, best)
    full = solve(problem, options)
    return NestedResult(np.asarray(x_opt), float(value), float(full.objective), count)


# ---------------------------------------------------------------------------
# cross-route report


@dataclass
class Tolerances:
    paths: float = 1e-9
    fd: float = 1e-4
    symmetry: float = 1e-8
    gap: float = 1e-6


@dataclass
class CrossCheckReport:
    labels: list
    x: list
    matrices: dict
    deviations: dict
    symmetry_defect: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    definiteness: str
    objective_gap: float
    guarantee: str | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)

    @property
    def breaches(self):
        t = self.tolerances
        out = []
        if self.deviations["kkt-projection"] > t.paths:
            out.append("kkt-projection")
        if self.deviations["kkt-fd"] > t.fd:
            out.append("kkt-fd")
        if self.symmetry_defect > t.symmetry:
            out.append("symmetry")
        if self.objective_gap > t.gap:
            out.append("objective-gap")
        if self.guarantee not in (None, "none") and self.definiteness == "indefinite":
            out.append("definiteness")
        return out

    @property
    def passed(self):
        return not self.breaches

    def to_dict(self):
        t = self.tolerances
        return {
            "labels": list(self.labels),
            "x": [float(v) for v in self.x],
            "matrices": {k: np.asarray(v).tolist() for k, v in self.matrices.items()},
            "deviations": dict(self.deviations),
            "symmetry_defect": self.symmetry_defect,
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.T.tolist(),
            "definiteness": self.definiteness,
            "objective_gap": self.objective_gap,
            "guarantee": self.guarantee,
            "tolerances": {"paths": t.paths, "fd": t.fd, "symmetry": t.symmetry, "gap": t.gap},
            "breaches": self.breaches,
            "passed": self.passed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self):
        lines = [f"firm slots: {', '.join(self.labels)}",
                 f"x: {', '.join(f'{v:.6g}' for v in self.x)}"]
        for name, M in self.matrices.items():
            lines.append(f"{name}:")
            lines.extend("  " + "  ".join(f"{v: .10g}" for v in row) for row in np.asarray(M))
        for k, v in self.deviations.items():
            lines.append(f"max |{k}|: {v:.3e}")
        lines.append(f"symmetry defect: {self.symmetry_defect:.3e}")
        lines.append("eigenvalues: " + ", ".join(f"{v:.10g}" for v in self.eigenvalues))
        lines.append(f"class: {self.definiteness}")
        lines.append(f"objective gap: {self.objective_gap:.3e}")
        if self.guarantee is not None:
            lines.append(f"guarantee: {self.guarantee}")
        lines.append("PASS" if self.passed else "BREACH: " + ", ".join(self.breaches))
        return "\n".join(lines)


def objective_gap(problem: Problem, options: SolverOptions = DEFAULT_OPTIONS) -> float:
    """``|U(z*) - (W(x*) + U_g(x*))|`` with ``x*`` the firm's full-market dispatch."""
    full = solve(problem, options)
    if not full.ok:
        raise InfeasibleError(f"full market solve ended with status {full.status}")
    x = full.z[problem.firm_index]
    return abs(full.objective - value_function(problem, x, (), options) - firm_offer_value(problem, x))


def cross_check(problem: Problem, x, fd_step=None, tolerances: Tolerances | None = None, report=None,
                options: SolverOptions = DEFAULT_OPTIONS) -> CrossCheckReport:
    """Compute all three response routes at ``x`` and compare them.

    ``report`` is an optional :class:`PropositionReport` whose guarantee is
    recorded; a passing guarantee with an indefinite matrix is a breach.

    Raises
    ------
    NonsmoothPointError
        From the finite-difference route.
    SingularBorderedHessianError
        From the analytic routes.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    kkt = response_matrix_kkt(problem, x, (), options)
    proj = response_matrix_projection(problem, x, (), options)
    fd = response_matrix_fd(problem, x, fd_step, (), options)
    M = kkt.values
    w, V = eigen(M)
    return CrossCheckReport(
        labels=kkt.labels,
        x=x.tolist(),
        matrices={"kkt": M, "projection": proj.values, "finite-difference": fd.values},
        deviations={"kkt-projection": float(np.abs(M - proj.values).max()),
                    "kkt-fd": float(np.abs(M - fd.values).max())},
        symmetry_defect=symmetry_defect(M),
        eigenvalues=w,
        eigenvectors=V,
        definiteness=classify_definiteness(M),
        objective_gap=float(objective_gap(problem, options)),
        guarantee=None if report is None else report.guarantee,
        tolerances=tolerances or Tolerances(),
    )
