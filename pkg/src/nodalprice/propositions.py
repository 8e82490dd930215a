"""Mechanical checks of the sufficient conditions for a well-behaved price response.

:func:`check_prop1` treats every firm injection as a parameter of the
residual market.  :func:`check_prop2` lets a subset of the firm's
(node, hour) slots stay in the optimization and checks the response of the
remaining block only.  Each check reports a verdict per assumption and a
guarantee level:

``symmetry+ND``    all structural checks pass, residual welfare strictly concave
``symmetry+NSD``   all structural checks pass, weakly concave and convex binding set
``symmetry-only``  structural checks pass, convexity does not
``none``           a structural check (cardinality, LICQ, kernel Hessian,
                   binding stability) or offer independence fails
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .errors import InfeasibleError, InvalidPartitionError, NodalPriceError
from .model import Problem
from .sensitivity import lagrangian_hessian, response_matrix_kkt
from .solver import (DEFAULT_OPTIONS, BindingSet, Solution, SolverOptions, binding_set, build_subproblem,
                     firm_prices, lmp_table, solve, solve_subproblem)

RANK_RTOL = 1e-8
KERNEL_RTOL = 1e-8
CONCAVITY_TOL = 1e-10
OFFER_TOL = 1e-8


@dataclass
class ReducedSet:
    indices: tuple[int, ...]
    labels: dict
    degenerate: tuple[int, ...] = ()

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class HourPartition:
    """Split of the firm's slots into free (``hat``) and parametric (``tilde``) labels."""

    hat: tuple[str, ...]
    tilde: tuple[str, ...]

    @classmethod
    def from_hat(cls, problem: Problem, hat):
        hat = tuple(hat)
        labels = problem.firm_labels
        unknown = [h for h in hat if h not in labels]
        if unknown:
            raise InvalidPartitionError(f"unknown firm slots {unknown}; firm slots are {labels}")
        return cls(hat, tuple(lab for lab in labels if lab not in hat))

    def validate(self, problem: Problem):
        labels = problem.firm_labels
        if set(self.hat) & set(self.tilde):
            raise InvalidPartitionError("partition halves overlap")
        if sorted(self.hat + self.tilde) != sorted(labels):
            raise InvalidPartitionError(f"partition must cover the firm slots {labels}")
        if not self.tilde:
            raise InvalidPartitionError("parametric half of the partition is empty")

    def hat_index(self, problem: Problem):
        labels = problem.firm_labels
        return [problem.firm_index[labels.index(h)] for h in self.hat]


@dataclass
class PropositionReport:
    proposition: int
    labels: list
    x: list
    verdicts: dict
    guarantee: str
    diagnostics: dict = field(default_factory=dict)
    radius: float = 0.0
    trials: int = 0

    @property
    def passed(self):
        return self.guarantee != "none"

    def to_dict(self):
        return {
            "proposition": self.proposition,
            "labels": list(self.labels),
            "x": [float(v) for v in self.x],
            "guarantee": self.guarantee,
            "verdicts": self.verdicts,
            "diagnostics": _jsonable(self.diagnostics),
            "probe": {"radius": self.radius, "trials": self.trials},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# individual checks


def reduced_set(bs: BindingSet) -> ReducedSet:
    """Drop the firm's own unit constraints (label ``C_x``) from a binding set.

    For a binding set of the residual subproblem the firm's fixed-slot
    constraints are already gone and any remaining ``C_x`` rows belong to
    free slots, so they are kept.
    """
    keep = tuple(i for i in bs.indices if bs.labels[i] != "C_x")
    return ReducedSet(keep, {i: bs.labels[i] for i in keep},
                      tuple(i for i in bs.degenerate if i in keep))


def _subproblem_set(bs: BindingSet) -> ReducedSet:
    return ReducedSet(bs.indices, dict(bs.labels), bs.degenerate)


def cardinality_check(rs: ReducedSet, problem: Problem) -> dict:
    ok = len(rs) <= problem.n
    return {"status": "pass" if ok else "fail", "constraints": len(rs), "variables": problem.n}


def licq(rs: ReducedSet, problem: Problem, sol: Solution) -> dict:
    """Rank test of the reduced Jacobian (relative singular value threshold)."""
    J = problem.jacobian(sol.z)[list(rs.indices)] if len(rs) else np.zeros((0, problem.n))
    if J.shape[0] == 0:
        return {"status": "pass", "rank": 0, "rows": 0, "smallest_singular_value": None,
                "deficiency_basis": [], "degenerate": []}
    s = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(s >= RANK_RTOL * s[0])) if s[0] > 0 else 0
    deficiency = []
    if rank < J.shape[0]:
        deficiency = null_space(J.T, rcond=RANK_RTOL).T.tolist()
    degenerate = [str(problem.constraints[i].tag) for i in rs.degenerate]
    ok = rank == J.shape[0] and not degenerate
    out = {"status": "pass" if ok else "fail", "rank": rank, "rows": int(J.shape[0]),
           "smallest_singular_value": float(s[-1]) if len(s) == J.shape[0] else 0.0,
           "deficiency_basis": deficiency, "degenerate": degenerate}
    if degenerate:
        out["reason"] = "weakly active constraints make the binding set unstable"
    return out


def kernel_hessian(rs: ReducedSet, problem: Problem, sol: Solution) -> dict:
    """Lagrangian Hessian restricted to the kernel of the reduced Jacobian."""
    J = problem.jacobian(sol.z)[list(rs.indices)] if len(rs) else np.zeros((0, problem.n))
    K = null_space(J, rcond=RANK_RTOL) if J.shape[0] else np.eye(problem.n)
    if K.shape[1] == 0:
        return {"status": "pass", "dimension": 0, "spectrum": [], "basis": [], "vacuous": True}
    H = lagrangian_hessian(problem, sol.multipliers, rs.indices)
    R = K.T @ H @ K
    w = np.linalg.eigvalsh(0.5 * (R + R.T))
    scale = max(1.0, np.abs(H).max(initial=0.0))
    ok = bool(np.all(np.abs(w) >= KERNEL_RTOL * scale))
    return {"status": "pass" if ok else "fail", "dimension": int(K.shape[1]),
            "spectrum": sorted(w.tolist(), reverse=True), "basis": K.T.tolist(),
            "negative_definite": bool(np.all(w <= -KERNEL_RTOL * scale)), "vacuous": False}


def convexity_check(problem: Problem, rs: ReducedSet) -> dict:
    """Concavity of the residual welfare and convexity of the binding constraints.

    Angles carry no welfare, so concavity is judged on the injection
    variables.  Verdict is ``strict``, ``weak`` or ``fail``.
    """
    qi = [i for i, v in enumerate(problem.variables) if v.kind == "q"]
    Pq = problem.P[np.ix_(qi, qi)]
    w = np.linalg.eigvalsh(0.5 * (Pq + Pq.T)) if qi else np.zeros(0)
    concave = bool(np.all(w <= CONCAVITY_TOL))
    strict = concave and bool(np.all(w < -CONCAVITY_TOL)) and len(w) > 0
    bad = []
    for i in rs.indices:
        rec = problem.constraints[i]
        if rec.Q is None:
            continue
        if rec.relation == "eq":
            bad.append(str(rec.tag))
        elif np.linalg.eigvalsh(0.5 * (rec.Q + rec.Q.T)).min() < -CONCAVITY_TOL:
            bad.append(str(rec.tag))
    if not concave or bad:
        verdict = "fail"
    else:
        verdict = "strict" if strict else "weak"
    return {"status": verdict, "objective_spectrum": sorted(w.tolist(), reverse=True),
            "nonconvex_constraints": bad}


def _probe_points(x, radius, trials, seed):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = len(x)
    pts = []
    for j in range(k):
        for sgn in (1.0, -1.0):
            e = np.zeros(k)
            e[j] = sgn * radius
            pts.append(x + e)
    rng = np.random.default_rng(seed)
    extra = max(0, trials - 2 * k)
    for _ in range(extra):
        d = rng.standard_normal(k)
        pts.append(x + radius * d / np.linalg.norm(d))
    return pts[:trials] if trials < len(pts) else pts


def binding_stability_probe(problem: Problem, x, radius=None, trials=None, hat=(), seed=0,
                            options: SolverOptions = DEFAULT_OPTIONS) -> dict:
    """Re-solve the residual market on a sphere around ``x`` and compare binding sets.

    ``radius`` defaults to ``1e-4 max(1, |x|_inf)``; ``trials`` to the
    ``2 k`` axis points plus 4 random directions.  A zero radius passes
    without probing.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if radius is None:
        radius = 1e-4 * max(1.0, np.abs(x).max(initial=0.0))
    if trials is None:
        trials = 2 * len(x) + 4
    out = {"radius": float(radius), "trials": int(trials), "failures": []}
    if radius == 0 or trials == 0:
        out["status"] = "pass"
        out["probed"] = 0
        return out
    sol, _, sub = solve_subproblem(problem, x, hat, options)
    base = binding_set(sub.problem, sol, options.act_tol).tag_set()
    pts = _probe_points(x, radius, trials, seed)
    for pt in pts:
        try:
            s, _, sp = solve_subproblem(problem, pt, hat, options)
        except InfeasibleError as exc:
            out["failures"].append({"x": pt.tolist(), "reason": f"infeasible: {exc}"})
            continue
        tags = binding_set(sp.problem, s, options.act_tol).tag_set()
        if tags != base:
            out["failures"].append({"x": pt.tolist(),
                                    "added": sorted(map(str, tags - base)),
                                    "removed": sorted(map(str, base - tags))})
    out["probed"] = len(pts)
    out["status"] = "pass" if not out["failures"] else "fail"
    return out


def _firm_bounds(problem: Problem, params):
    s = problem.meta["scenario"]
    lo, hi = [], []
    for i in params:
        v = problem.variables[i]
        u = s.unit(v.unit)
        lo.append(u.pmin_at(v.hour))
        hi.append(u.pmax_at(v.hour))
    return np.array(lo), np.array(hi)


def offer_independence(problem: Problem, x, prices, hat=(), slopes=(0.5, 2.0),
                       options: SolverOptions = DEFAULT_OPTIONS) -> dict:
    """Replace the firm's parametric offers by curves that clear at ``x``; prices must not move.

    Each variant offers marginal price ``prices_k + s (q - x_k)``.
    """
    params = [i for i in problem.firm_index if i not in set(hat)]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    prices = np.asarray(prices, dtype=float)
    lo, hi = _firm_bounds(problem, params)
    if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9):
        return {"status": "skipped", "reason": "x lies outside the firm's unit bounds", "variants": []}
    variants = []
    for s in slopes:
        q = -s * np.ones(len(params))
        lin = -(prices - s * x)
        alt = problem.with_objective_terms(params, q, lin)
        try:
            sol = solve(alt, options)
        except NodalPriceError as exc:
            variants.append({"slope": s, "status": "fail", "reason": str(exc)})
            continue
        if not sol.ok:
            variants.append({"slope": s, "status": "fail", "reason": sol.status})
            continue
        table = lmp_table(sol)
        lam = np.array([table[(problem.variables[i].node, problem.variables[i].hour)] for i in params])
        xs = sol.z[params]
        dev = float(np.abs(lam - prices).max())
        same_x = float(np.abs(xs - x).max())
        variants.append({"slope": s, "status": "pass" if dev <= OFFER_TOL and same_x <= 1e-7 else "fail",
                         "price_deviation": dev, "dispatch_deviation": same_x})
    status = "pass" if all(v["status"] == "pass" for v in variants) else "fail"
    return {"status": status, "variants": variants}


# ---------------------------------------------------------------------------
# full checks


def _guarantee(verdicts):
    structural = ("cardinality", "licq", "kernel_hessian", "binding_stability")
    if any(verdicts[k]["status"] != "pass" for k in structural):
        return "none"
    if verdicts["uniqueness"]["status"] == "fail":
        return "none"
    if verdicts.get("offer_independence", {}).get("status") == "fail":
        return "none"
    conv = verdicts["convexity"]["status"]
    return {"strict": "symmetry+ND", "weak": "symmetry+NSD"}.get(conv, "symmetry-only")


def _run(problem, x, hat, proposition, radius, trials, seed, options, check_offers):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sol, W, sub = solve_subproblem(problem, x, hat, options)
    red = sub.problem
    bs = binding_set(red, sol, options.act_tol)
    rs = _subproblem_set(bs)
    verdicts = {
        "smoothness": {"status": "pass", "basis": "structural: linear and quadratic forms only, "
                                                  "no dispatch on a bid breakpoint"},
        "cardinality": cardinality_check(rs, red),
        "licq": licq(rs, red, sol),
        "kernel_hessian": kernel_hessian(rs, red, sol),
    }
    verdicts["binding_stability"] = binding_stability_probe(problem, x, radius, trials, hat, seed, options)
    kh = verdicts["kernel_hessian"]
    unique = kh["status"] == "pass" and (kh["vacuous"] or kh["negative_definite"]) \
        and verdicts["binding_stability"]["status"] == "pass"
    verdicts["uniqueness"] = {"status": "proxy-verified" if unique else "fail",
                              "basis": "negative definite kernel Hessian and stable binding set"}
    verdicts["convexity"] = convexity_check(red, rs)
    prices = firm_prices(sol, sub)
    diagnostics = {
        "binding_set": [str(red.constraints[i].tag) for i in bs.indices],
        "partition": {str(red.constraints[i].tag): bs.labels[i] for i in bs.indices},
        "degenerate": [str(red.constraints[i].tag) for i in bs.degenerate],
        "prices": prices.tolist(),
        "value": W,
        "kernel_dimension": kh["dimension"],
        "licq_smallest_singular_value": verdicts["licq"]["smallest_singular_value"],
    }
    if kh["spectrum"]:
        diagnostics["kernel_min_abs_eigenvalue"] = float(np.min(np.abs(kh["spectrum"])))
    structural_ok = all(verdicts[k]["status"] == "pass"
                        for k in ("cardinality", "licq", "kernel_hessian", "binding_stability"))
    if structural_ok and check_offers:
        verdicts["offer_independence"] = offer_independence(problem, x, prices, hat, options=options)
    else:
        verdicts["offer_independence"] = {"status": "skipped"}
    guarantee = _guarantee(verdicts)
    if guarantee != "none":
        M = response_matrix_kkt(problem, x, hat, options)
        diagnostics["response_matrix"] = M.values.tolist()
    stab = verdicts["binding_stability"]
    return PropositionReport(proposition, sub.labels, x.tolist(), verdicts, guarantee, diagnostics,
                             stab["radius"], stab["trials"])


def firm_dispatch(problem: Problem, options: SolverOptions = DEFAULT_OPTIONS, sol=None):
    """Firm injections at the full market optimum."""
    sol = solve(problem, options) if sol is None else sol
    if not sol.ok:
        raise InfeasibleError(f"full market solve ended with status {sol.status}")
    return sol.z[problem.firm_index], sol


def check_prop1(problem: Problem, x=None, *, radius=None, trials=None, seed=0, check_offers=True,
                options: SolverOptions = DEFAULT_OPTIONS) -> PropositionReport:
    """Check the all-hours conditions at firm injections ``x``.

    ``x`` defaults to the firm's dispatch at the full market optimum.
    """
    if x is None:
        x, _ = firm_dispatch(problem, options)
    return _run(problem, x, (), 1, radius, trials, seed, options, check_offers)


def _coupling(problem: Problem, hat_idx, tilde_idx, x_tilde, options):
    """Firm constraints binding in the generalized subproblem that mix both halves."""
    sub = build_subproblem(problem, x_tilde, hat_idx)
    sol = solve(sub.problem, options)
    if not sol.ok:
        return []
    bs = binding_set(sub.problem, sol, options.act_tol)
    hat_set, tilde_set = set(hat_idx), set(tilde_idx)
    out = []
    for i in bs.indices:
        parent_i = sub.kept[i]
        rec = problem.constraints[parent_i]
        if not problem.is_firm_constraint(rec):
            continue
        touched = set(np.flatnonzero(rec.a))
        if touched & hat_set and touched & tilde_set:
            out.append(str(rec.tag))
    return out


def check_prop2(problem: Problem, partition: HourPartition, x=None, *, radius=None, trials=None, seed=0,
                check_offers=True, options: SolverOptions = DEFAULT_OPTIONS) -> PropositionReport:
    """Check the conditions for the block of slots in ``partition.tilde``.

    ``x`` holds the parametric injections (``tilde`` order); it defaults to
    the full-market dispatch.

    Raises
    ------
    InvalidPartitionError
        If the partition does not cover the firm's slots or a binding firm
        constraint couples the two halves.
    """
    partition.validate(problem)
    hat_idx = partition.hat_index(problem)
    labels = problem.firm_labels
    tilde_idx = [problem.firm_index[labels.index(t)] for t in partition.tilde]
    if x is None:
        xs, _ = firm_dispatch(problem, options)
        x = np.array([xs[problem.firm_index.index(i)] for i in tilde_idx])
    coupled = _coupling(problem, hat_idx, tilde_idx, x, options)
    if coupled:
        raise InvalidPartitionError(f"binding firm constraints couple the partition: {coupled}")
    report = _run(problem, x, hat_idx, 2, radius, trials, seed, options, check_offers)
    report.diagnostics["hat"] = list(partition.hat)
    report.diagnostics["tilde"] = list(partition.tilde)
    return report
