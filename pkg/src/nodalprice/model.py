"""Market scenarios and their assembly into the day-ahead clearing problem.

A :class:`Scenario` is a declarative description of nodes, lines, units and
bids over a horizon of ``hours``.  :func:`assemble_problem` turns it into a
:class:`Problem`: a concave quadratic welfare objective over nodal
injections ``q`` and voltage angles ``u`` together with a list of tagged
linear or quadratic constraint records.

Sign conventions
----------------
Every constraint is stored as ``g(z) = 1/2 z'Qz + a'z + b`` with relation
``eq`` (``g = 0``) or ``le`` (``g <= 0``).  The nodal balance at ``(n, h)``
reads ``outflow(u) + losses(u) + q_load - q_gen = 0``, so a consumption
variable carries ``+1`` and a generation variable ``-1``.  With the
Lagrangian ``U - sum(L_m g_m)`` the balance multiplier is the nodal price.

Hours are 1-based everywhere in the public API.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import AssemblyError, ScenarioError

KINDS = ("generator", "load", "firm-injection")


class Segment(NamedTuple):
    breakpoint: float
    intercept: float
    slope: float


@dataclass(frozen=True)
class BidCurve:
    """Piecewise-linear marginal price curve.

    On segment ``k`` the marginal price at quantity ``q`` is
    ``intercept_k + slope_k * (q - breakpoint_k)``; segment ``k`` covers
    ``[breakpoint_k, breakpoint_{k+1}]``.
    """

    segments: tuple[Segment, ...]
    orientation: str  # "supply" or "demand"

    def marginal_price(self, q):
        k = self.segment_of(q)
        s = self.segments[k]
        return s.intercept + s.slope * (q - s.breakpoint)

    def segment_of(self, q):
        k = 0
        for i, s in enumerate(self.segments):
            if q >= s.breakpoint:
                k = i
        return k

    def integral(self, q):
        """Area under the marginal price curve from the first breakpoint to ``q``."""
        total = 0.0
        segs = self.segments
        for k, s in enumerate(segs):
            if k > 0 and q <= s.breakpoint:
                break
            hi = segs[k + 1].breakpoint if k + 1 < len(segs) else np.inf
            d = min(q, hi) - s.breakpoint
            total += s.intercept * d + 0.5 * s.slope * d * d
        return total

    def violations(self, owner):
        out = []
        segs = self.segments
        if not segs:
            return [Violation(owner, "empty-bid", "bid curve has no segments")]
        if segs[0].breakpoint < 0:
            out.append(Violation(owner, "breakpoint-order", "first breakpoint is negative"))
        sign = 1.0 if self.orientation == "supply" else -1.0
        for k, s in enumerate(segs):
            if sign * s.slope < 0:
                out.append(Violation(owner, "nonmonotone-bid",
                                     f"segment {k} slope {s.slope} has the wrong sign for {self.orientation}"))
            if k + 1 < len(segs):
                nxt = segs[k + 1]
                if nxt.breakpoint <= s.breakpoint:
                    out.append(Violation(owner, "breakpoint-order",
                                         f"breakpoint {k + 1} not above breakpoint {k}"))
                    continue
                end = s.intercept + s.slope * (nxt.breakpoint - s.breakpoint)
                if sign * (nxt.intercept - end) < -1e-12:
                    out.append(Violation(owner, "nonmonotone-bid",
                                         f"price jumps the wrong way at breakpoint {k + 1}"))
        return out


@dataclass(frozen=True)
class Unit:
    id: str
    node: str
    kind: str
    firm: str
    pmin: tuple[float, ...]
    pmax: tuple[float, ...]
    bids: tuple[BidCurve | None, ...]
    hours: tuple[int, ...]
    ramp_up: float | None = None
    ramp_down: float | None = None
    segment: tuple[int | None, ...] | None = None

    def pmin_at(self, h):
        return self.pmin[h - 1]

    def pmax_at(self, h):
        return self.pmax[h - 1]

    def bid_at(self, h):
        return self.bids[h - 1]


@dataclass(frozen=True)
class NetworkLine:
    from_node: str
    to_node: str
    susceptance: float
    limit: float | None = None
    loss: float | None = None

    @property
    def name(self):
        return f"{self.from_node}-{self.to_node}"


@dataclass(frozen=True)
class Scenario:
    hours: int
    nodes: tuple[str, ...]
    lines: tuple[NetworkLine, ...]
    units: tuple[Unit, ...]
    reference_node: tuple[str, ...]  # one per hour
    firm_of_interest: str

    def unit(self, uid):
        for u in self.units:
            if u.id == uid:
                return u
        raise KeyError(uid)

    def firm_units(self):
        return [u for u in self.units if u.firm == self.firm_of_interest]


class Violation(NamedTuple):
    entity: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.entity}: [{self.rule}] {self.message}"


# ---------------------------------------------------------------------------
# parsing and serialization


def _num(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"expected a number, got {value!r}", entity=path)
    if not np.isfinite(value):
        raise ScenarioError("number must be finite", entity=path)
    return float(value)


def _per_hour(value, hours, path):
    if isinstance(value, list):
        if len(value) != hours:
            raise ScenarioError(f"expected {hours} per-hour values, got {len(value)}", entity=path)
        return tuple(_num(v, f"{path}[{i}]") for i, v in enumerate(value))
    v = _num(value, path)
    return (v,) * hours


def _segments(raw, path):
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("bid must be a non-empty list of [breakpoint, intercept, slope]", entity=path)
    segs = []
    for i, s in enumerate(raw):
        if not isinstance(s, list) or len(s) != 3:
            raise ScenarioError("segment must be [breakpoint, intercept, slope]", entity=f"{path}[{i}]")
        segs.append(Segment(*(_num(v, f"{path}[{i}]") for v in s)))
    return tuple(segs)


def _bids(raw, hours, orientation, path):
    if raw is None:
        return (None,) * hours
    per_hour = isinstance(raw, list) and raw and isinstance(raw[0], list) and raw[0] \
        and isinstance(raw[0][0], list)
    if per_hour:
        if len(raw) != hours:
            raise ScenarioError(f"expected {hours} per-hour bid curves, got {len(raw)}", entity=path)
        return tuple(BidCurve(_segments(r, f"{path}[{h}]"), orientation) for h, r in enumerate(raw))
    curve = BidCurve(_segments(raw, path), orientation)
    return (curve,) * hours


def _require(obj, key, path):
    if key not in obj:
        raise ScenarioError(f"missing required field '{key}'", entity=path)
    return obj[key]


def scenario_from_dict(doc) -> Scenario:
    """Build a :class:`Scenario` from a decoded document without semantic checks."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    hours = _require(doc, "hours", "hours")
    if isinstance(hours, bool) or not isinstance(hours, int) or hours < 1:
        raise ScenarioError("hours must be an integer >= 1", entity="hours")

    nodes = []
    for i, n in enumerate(_require(doc, "nodes", "nodes")):
        if isinstance(n, dict):
            n = _require(n, "id", f"nodes[{i}]")
        if not isinstance(n, str):
            raise ScenarioError("node id must be a string", entity=f"nodes[{i}]")
        nodes.append(n)

    lines = []
    for i, ln in enumerate(doc.get("lines", [])):
        path = f"lines[{i}]"
        if not isinstance(ln, dict):
            raise ScenarioError("line must be an object", entity=path)
        lines.append(NetworkLine(
            from_node=str(_require(ln, "from", path)),
            to_node=str(_require(ln, "to", path)),
            susceptance=_num(_require(ln, "susceptance", path), f"{path}.susceptance"),
            limit=None if ln.get("limit") is None else _num(ln["limit"], f"{path}.limit"),
            loss=None if ln.get("loss") is None else _num(ln["loss"], f"{path}.loss"),
        ))

    units = []
    for i, u in enumerate(_require(doc, "units", "units")):
        path = f"units[{i}]"
        if not isinstance(u, dict):
            raise ScenarioError("unit must be an object", entity=path)
        kind = _require(u, "kind", path)
        if kind not in KINDS:
            raise ScenarioError(f"unknown unit kind {kind!r}", entity=f"{path}.kind")
        orientation = "demand" if kind == "load" else "supply"
        active = u.get("hours")
        if active is None:
            active = tuple(range(1, hours + 1))
        else:
            if not isinstance(active, list) or not all(isinstance(h, int) and 1 <= h <= hours for h in active):
                raise ScenarioError(f"hours must list integers in 1..{hours}", entity=f"{path}.hours")
            active = tuple(sorted(set(active)))
        seg = u.get("segment")
        if seg is not None:
            seg = tuple(seg) if isinstance(seg, list) else (int(seg),) * hours
            if len(seg) != hours:
                raise ScenarioError(f"expected {hours} segment pins", entity=f"{path}.segment")
        units.append(Unit(
            id=str(_require(u, "id", path)),
            node=str(_require(u, "node", path)),
            kind=kind,
            firm=str(u.get("firm", "")),
            pmin=_per_hour(_require(u, "pmin", path), hours, f"{path}.pmin"),
            pmax=_per_hour(_require(u, "pmax", path), hours, f"{path}.pmax"),
            bids=_bids(u.get("bid"), hours, orientation, f"{path}.bid"),
            hours=active,
            ramp_up=None if u.get("ramp_up") is None else _num(u["ramp_up"], f"{path}.ramp_up"),
            ramp_down=None if u.get("ramp_down") is None else _num(u["ramp_down"], f"{path}.ramp_down"),
            segment=seg,
        ))

    ref = _require(doc, "reference_node", "reference_node")
    if isinstance(ref, list):
        if len(ref) != hours:
            raise ScenarioError(f"expected {hours} reference nodes", entity="reference_node")
        ref = tuple(str(r) for r in ref)
    else:
        ref = (str(ref),) * hours
    firm = _require(doc, "firm_of_interest", "firm_of_interest")
    if not isinstance(firm, str):
        raise ScenarioError("firm_of_interest must be a single firm id", entity="firm_of_interest")
    return Scenario(hours, tuple(nodes), tuple(lines), tuple(units), ref, firm)


def parse_scenario(doc: str) -> Scenario:
    """Parse and validate a scenario document (JSON text).

    Raises
    ------
    ScenarioError
        On a syntax error (carries the line number), a schema error (carries
        the field path) or a semantic violation (carries the entity id).
    """
    try:
        raw = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"syntax error: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    scenario = scenario_from_dict(raw)
    problems = validate_scenario(scenario)
    if problems:
        first = problems[0]
        msg = "; ".join(str(v) for v in problems)
        raise ScenarioError(msg, entity=first.entity)
    return scenario


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _compact(values):
    values = list(values)
    return values[0] if all(v == values[0] for v in values) else values


def _bid_doc(curve):
    return [[s.breakpoint, s.intercept, s.slope] for s in curve.segments]


def scenario_to_dict(s: Scenario) -> dict:
    units = []
    for u in s.units:
        d = {"id": u.id, "node": u.node, "kind": u.kind, "firm": u.firm,
             "pmin": _compact(u.pmin), "pmax": _compact(u.pmax)}
        if u.hours != tuple(range(1, s.hours + 1)):
            d["hours"] = list(u.hours)
        if u.ramp_up is not None:
            d["ramp_up"] = u.ramp_up
        if u.ramp_down is not None:
            d["ramp_down"] = u.ramp_down
        if any(b is not None for b in u.bids):
            if all(b == u.bids[0] for b in u.bids):
                d["bid"] = _bid_doc(u.bids[0])
            else:
                d["bid"] = [_bid_doc(b) for b in u.bids]
        if u.segment is not None:
            d["segment"] = list(u.segment)
        units.append(d)
    lines = []
    for ln in s.lines:
        d = {"from": ln.from_node, "to": ln.to_node, "susceptance": ln.susceptance}
        if ln.limit is not None:
            d["limit"] = ln.limit
        if ln.loss is not None:
            d["loss"] = ln.loss
        lines.append(d)
    return {
        "hours": s.hours,
        "nodes": list(s.nodes),
        "lines": lines,
        "units": units,
        "reference_node": _compact(s.reference_node),
        "firm_of_interest": s.firm_of_interest,
    }


def serialize_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2)


# ---------------------------------------------------------------------------
# validation


def validate_scenario(s: Scenario) -> list[Violation]:
    """Return every broken invariant as a :class:`Violation`; empty means valid."""
    out = []
    if s.hours < 1:
        out.append(Violation("scenario", "hours", "hours must be >= 1"))
    node_set = set(s.nodes)
    if len(node_set) != len(s.nodes):
        out.append(Violation("nodes", "duplicate-id", "node ids must be unique"))
    for h, r in enumerate(s.reference_node, start=1):
        if r not in node_set:
            out.append(Violation(r, "unknown-node", f"reference node for hour {h} is not declared"))

    for ln in s.lines:
        for end in (ln.from_node, ln.to_node):
            if end not in node_set:
                out.append(Violation(end, "unknown-node", f"line {ln.name} references an undeclared node"))
        if ln.from_node == ln.to_node:
            out.append(Violation(ln.name, "self-loop", "line endpoints coincide"))
        if ln.susceptance <= 0:
            out.append(Violation(ln.name, "susceptance", "susceptance must be positive"))
        if ln.loss is not None and ln.loss < 0:
            out.append(Violation(ln.name, "loss", "loss coefficient must be nonnegative"))
        if ln.limit is not None and ln.limit <= 0:
            out.append(Violation(ln.name, "flow-limit", "flow limit must be positive"))

    ids = [u.id for u in s.units]
    if len(set(ids)) != len(ids):
        out.append(Violation("units", "duplicate-id", "unit ids must be unique"))
    firm_slots = {}
    for u in s.units:
        if u.node not in node_set:
            out.append(Violation(u.node, "unknown-node", f"unit {u.id} references an undeclared node"))
        for h in range(1, s.hours + 1):
            if u.pmin_at(h) > u.pmax_at(h):
                out.append(Violation(u.id, "bound-order", f"pmin > pmax in hour {h}"))
        for name in ("ramp_up", "ramp_down"):
            r = getattr(u, name)
            if r is not None and r < 0:
                out.append(Violation(u.id, "negative-ramp", f"{name} must be >= 0"))
        if u.kind == "firm-injection":
            if any(b is not None for b in u.bids):
                out.append(Violation(u.id, "costless-bid", "firm injections are costless and carry no bid"))
        else:
            for h in u.hours:
                bid = u.bid_at(h)
                if bid is None:
                    if u.kind == "generator" or u.pmin_at(h) != u.pmax_at(h):
                        out.append(Violation(u.id, "missing-bid", f"no bid in hour {h}"))
                else:
                    out.extend(bid.violations(u.id))
        if u.firm == s.firm_of_interest:
            if u.kind == "load":
                out.append(Violation(u.id, "firm-unit-kind", "firm-of-interest units must inject power"))
            for h in u.hours:
                key = (u.node, h)
                if key in firm_slots:
                    out.append(Violation(u.node, "multi-unit-node",
                                         f"units {firm_slots[key]} and {u.id} of the firm share a node"))
                firm_slots[key] = u.id
    if not firm_slots:
        out.append(Violation(s.firm_of_interest, "firm-of-interest", "firm of interest owns no active unit"))
    # de-duplicate while keeping order (repeated per-hour bid checks)
    seen, unique = set(), []
    for v in out:
        if v not in seen:
            seen.add(v)
            unique.append(v)
    return unique


# ---------------------------------------------------------------------------
# problem assembly


class Tag(NamedTuple):
    kind: str  # balance | limit | ramp | flow | reference
    entity: str
    hour: int
    detail: str = ""

    def __str__(self):
        s = f"{self.kind}:{self.entity}@{self.hour}"
        return f"{s}:{self.detail}" if self.detail else s


class Variable(NamedTuple):
    kind: str  # q | theta
    node: str
    hour: int
    unit: str = ""
    firm: str = ""
    sign: float = 0.0  # balance coefficient: +1 load, -1 injection, 0 angle

    @property
    def name(self):
        if self.kind == "q":
            return f"q[{self.unit}@{self.hour}]"
        return f"theta[{self.node}@{self.hour}]"


@dataclass
class ConstraintRecord:
    tag: Tag
    relation: str  # "eq" | "le"
    a: np.ndarray
    b: float
    Q: np.ndarray | None = None

    def value(self, z):
        v = self.a @ z + self.b
        if self.Q is not None:
            v += 0.5 * z @ self.Q @ z
        return float(v)

    def gradient(self, z):
        if self.Q is None:
            return self.a.copy()
        return self.a + self.Q @ z


@dataclass
class Problem:
    """Assembled clearing problem: maximize ``U(z)`` subject to tagged records.

    ``U(z) = 1/2 z'Pz + p'z + sum(c)`` with ``c`` a per-variable constant, so
    that dropping variables also drops their constant terms.
    """

    variables: list[Variable]
    P: np.ndarray
    p: np.ndarray
    c: np.ndarray
    constraints: list[ConstraintRecord]
    firm: str
    hours: int
    firm_units: frozenset = frozenset()
    firm_slots: tuple = ()  # (node, hour) of each firm injection variable in index order
    local_only: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.variables)

    @property
    def m(self):
        return len(self.constraints)

    def objective(self, z):
        return float(0.5 * z @ self.P @ z + self.p @ z + self.c.sum())

    def objective_gradient(self, z):
        return self.P @ z + self.p

    def values(self, z):
        return np.array([c.value(z) for c in self.constraints])

    def jacobian(self, z):
        if not self.constraints:
            return np.zeros((0, self.n))
        return np.array([c.gradient(z) for c in self.constraints])

    def index_of(self, tag):
        """Index of the record with ``tag`` (a :class:`Tag` or its string form)."""
        for i, c in enumerate(self.constraints):
            if c.tag == tag or str(c.tag) == tag:
                return i
        raise KeyError(tag)

    def tags(self, kind=None):
        return [c.tag for c in self.constraints if kind is None or c.tag.kind == kind]

    @property
    def firm_index(self):
        """Variable indices of the firm-of-interest injections, in label order."""
        return [i for i, v in enumerate(self.variables) if v.kind == "q" and v.unit in self.firm_units]

    @property
    def firm_labels(self):
        return [f"{self.variables[i].node}@{self.variables[i].hour}" for i in self.firm_index]

    def is_firm_constraint(self, rec):
        return rec.tag.kind in ("limit", "ramp") and rec.tag.entity in self.firm_units

    def label(self, rec):
        """Binding-set partition label of a constraint record."""
        kind = rec.tag.kind
        if kind in ("limit", "ramp"):
            return "C_x" if rec.tag.entity in self.firm_units else "C_y"
        if kind == "balance":
            return "C_xu" if (rec.tag.entity, rec.tag.hour) in set(self.firm_slots) else "C_yu"
        return "C_u"

    def with_objective_terms(self, idx, quad, lin, const=None):
        """Copy with the objective terms of variables ``idx`` replaced."""
        P = self.P.copy()
        p = self.p.copy()
        c = self.c.copy()
        idx = list(idx)
        P[idx, :] = 0.0
        P[:, idx] = 0.0
        P[idx, idx] = quad
        p[idx] = lin
        c[idx] = 0.0 if const is None else const
        return Problem(self.variables, P, p, c, self.constraints, self.firm, self.hours,
                       self.firm_units, self.firm_slots, self.local_only, dict(self.meta))

    def restrict(self, fixed, values, drop_constraints=(), drop_objective=True):
        """Fix variables ``fixed`` at ``values`` and return the problem in the rest.

        Returns
        -------
        sub : Problem
        free : list of int
            Parent indices of the sub-problem variables.
        kept : list of int
            Parent indices of the sub-problem constraints.
        """
        fixed = list(fixed)
        xf = np.asarray(values, dtype=float)
        fixed_set = set(fixed)
        free = [i for i in range(self.n) if i not in fixed_set]
        drop = set(drop_constraints)
        kept, records = [], []
        for i, rec in enumerate(self.constraints):
            if i in drop:
                continue
            a = rec.a[free].copy()
            b = rec.b + rec.a[fixed] @ xf
            Q = None
            if rec.Q is not None:
                a += rec.Q[np.ix_(free, fixed)] @ xf
                b += 0.5 * xf @ rec.Q[np.ix_(fixed, fixed)] @ xf
                Qf = rec.Q[np.ix_(free, free)]
                Q = Qf if np.any(Qf) else None
            kept.append(i)
            records.append(ConstraintRecord(rec.tag, rec.relation, a, float(b), Q))
        P = self.P[np.ix_(free, free)].copy()
        p = self.p[free].copy()
        c = self.c[free].copy()
        if not drop_objective:
            p += self.P[np.ix_(free, fixed)] @ xf
        sub = Problem([self.variables[i] for i in free], P, p, c, records, self.firm, self.hours,
                      self.firm_units, self.firm_slots, self.local_only, dict(self.meta))
        return sub, free, kept


def _unit_segment(u, h):
    """Pick the active bid segment of unit ``u`` in hour ``h``; returns (k, lo, hi)."""
    bid = u.bid_at(h)
    segs = bid.segments
    if len(segs) == 1:
        return 0, -np.inf, np.inf
    pmin, pmax = u.pmin_at(h), u.pmax_at(h)
    ranges = []
    for k, s in enumerate(segs):
        lo = s.breakpoint if k > 0 else -np.inf
        hi = segs[k + 1].breakpoint if k + 1 < len(segs) else np.inf
        ranges.append((lo, hi))
    if u.segment is not None and u.segment[h - 1] is not None:
        k = u.segment[h - 1]
        if not 0 <= k < len(segs):
            raise AssemblyError(f"unit {u.id}: pinned segment {k} does not exist")
        return k, *ranges[k]
    candidates = [k for k, (lo, hi) in enumerate(ranges) if min(hi, pmax) - max(lo, pmin) > 0]
    if len(candidates) == 1:
        return candidates[0], *ranges[candidates[0]]
    raise AssemblyError(
        f"unit {u.id} hour {h}: bid segment is ambiguous within [{pmin}, {pmax}]; "
        f"pin one with the unit's 'segment' field (candidates {candidates})")


def _components(nodes, lines):
    parent = {n: n for n in nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ln in lines:
        parent[find(ln.from_node)] = find(ln.to_node)
    groups = {}
    for n in nodes:
        groups.setdefault(find(n), []).append(n)
    return list(groups.values())


def assemble_problem(s: Scenario) -> Problem:
    """Assemble the welfare-maximization problem of scenario ``s``.

    Raises
    ------
    ScenarioError
        If the scenario has invariant violations.
    AssemblyError
        If a multi-segment bid has no unambiguous active segment.
    """
    problems = validate_scenario(s)
    if problems:
        raise ScenarioError("; ".join(map(str, problems)), entity=problems[0].entity)

    variables: list[Variable] = []
    qidx: dict[tuple[str, int], int] = {}
    for u in s.units:
        sign = 1.0 if u.kind == "load" else -1.0
        for h in u.hours:
            qidx[(u.id, h)] = len(variables)
            variables.append(Variable("q", u.node, h, u.id, u.firm, sign))
    line_nodes = [n for n in s.nodes if any(n in (ln.from_node, ln.to_node) for ln in s.lines)]
    tidx: dict[tuple[str, int], int] = {}
    for h in range(1, s.hours + 1):
        for node in line_nodes:
            tidx[(node, h)] = len(variables)
            variables.append(Variable("theta", node, h))
    n = len(variables)

    P = np.zeros((n, n))
    p = np.zeros(n)
    c = np.zeros(n)
    records: list[ConstraintRecord] = []
    local_only = False

    def rec(tag, relation, a, b, Q=None):
        records.append(ConstraintRecord(tag, relation, a, float(b), Q))

    # objective and unit limits
    for u in s.units:
        for h in u.hours:
            i = qidx[(u.id, h)]
            pmin, pmax = u.pmin_at(h), u.pmax_at(h)
            lo_seg, hi_seg = -np.inf, np.inf
            bid = u.bid_at(h)
            if bid is not None:
                k, lo_seg, hi_seg = _unit_segment(u, h)
                seg = bid.segments[k]
                base = bid.integral(seg.breakpoint) if k > 0 else 0.0
                # integral over the pinned segment: base + m0 (q-b) + s/2 (q-b)^2
                quad = seg.slope
                lin = seg.intercept - seg.slope * seg.breakpoint
                const = base - seg.intercept * seg.breakpoint + 0.5 * seg.slope * seg.breakpoint ** 2
                sgn = 1.0 if u.kind == "load" else -1.0
                P[i, i] = sgn * quad
                p[i] = sgn * lin
                c[i] = sgn * const
            e = np.zeros(n)
            e[i] = 1.0
            if pmin == pmax:
                rec(Tag("limit", u.id, h, "fixed"), "eq", e, -pmin)
            else:
                rec(Tag("limit", u.id, h, "lo"), "le", -e, pmin)
                rec(Tag("limit", u.id, h, "hi"), "le", e.copy(), -pmax)
            if lo_seg > pmin:
                rec(Tag("limit", u.id, h, "seg-lo"), "le", -e, lo_seg)
            if hi_seg < pmax:
                rec(Tag("limit", u.id, h, "seg-hi"), "le", e.copy(), -hi_seg)

    # ramps between consecutive active hours
    for u in s.units:
        for h in u.hours:
            if h + 1 not in u.hours:
                continue
            i0, i1 = qidx[(u.id, h)], qidx[(u.id, h + 1)]
            if u.ramp_up is not None:
                a = np.zeros(n)
                a[i1], a[i0] = 1.0, -1.0
                rec(Tag("ramp", u.id, h, "up"), "le", a, -u.ramp_up)
            if u.ramp_down is not None:
                a = np.zeros(n)
                a[i0], a[i1] = 1.0, -1.0
                rec(Tag("ramp", u.id, h, "down"), "le", a, -u.ramp_down)

    # nodal balances
    for h in range(1, s.hours + 1):
        for node in s.nodes:
            a = np.zeros(n)
            Q = np.zeros((n, n))
            for u in s.units:
                if u.node == node and h in u.hours:
                    i = qidx[(u.id, h)]
                    a[i] = variables[i].sign
            for ln in s.lines:
                if node not in (ln.from_node, ln.to_node):
                    continue
                f, t = tidx[(ln.from_node, h)], tidx[(ln.to_node, h)]
                out = 1.0 if node == ln.from_node else -1.0
                a[f] += out * ln.susceptance
                a[t] -= out * ln.susceptance
                if ln.loss:
                    d = np.zeros(n)
                    d[f], d[t] = 1.0, -1.0
                    # half of k F^2 booked at each end: 1/2 z'Qz = (k/2) b^2 (theta_f - theta_t)^2
                    Q += ln.loss * ln.susceptance ** 2 * np.outer(d, d)
            rec(Tag("balance", node, h), "eq", a, 0.0, Q if np.any(Q) else None)
            if records[-1].Q is not None:
                local_only = True

    # flow limits
    for h in range(1, s.hours + 1):
        for ln in s.lines:
            if ln.limit is None:
                continue
            f, t = tidx[(ln.from_node, h)], tidx[(ln.to_node, h)]
            a = np.zeros(n)
            a[f], a[t] = ln.susceptance, -ln.susceptance
            rec(Tag("flow", ln.name, h, "fwd"), "le", a, -ln.limit)
            rec(Tag("flow", ln.name, h, "rev"), "le", -a, -ln.limit)

    # one reference angle per connected component per hour
    comps = _components(line_nodes, s.lines)
    for h in range(1, s.hours + 1):
        ref = s.reference_node[h - 1]
        for comp in comps:
            node = ref if ref in comp else comp[0]
            a = np.zeros(n)
            a[tidx[(node, h)]] = 1.0
            rec(Tag("reference", node, h), "eq", a, 0.0)

    firm_units = frozenset(u.id for u in s.firm_units())
    firm_slots = tuple((v.node, v.hour) for v in variables if v.kind == "q" and v.unit in firm_units)
    return Problem(variables, P, p, c, records, s.firm_of_interest, s.hours, firm_units,
                   firm_slots, local_only, {"scenario": s})
