"""Built-in fixtures and a seeded random scenario generator."""

import numpy as np

from .model import Scenario, scenario_from_dict, validate_scenario
from .errors import ScenarioError


def ramp2h_doc(n=8.0, alpha=1.0, c=1.0, firm_cap=None):
    """One node, two hours, ramp-limited rival supplier and a costless firm.

    Demand bids ``alpha * (1.5 n - y)`` and ``alpha * (3 n - y)``; the rival
    offers ``7 c n / 4`` then ``c n`` with capacity ``5 n`` and upward ramp
    ``n``.  The firm's injections default to ``[0, n / 8]`` per hour.
    """
    return {
        "hours": 2,
        "nodes": ["n1"],
        "lines": [],
        "units": [
            {"id": "D", "node": "n1", "kind": "load", "firm": "consumers", "pmin": 0,
             "pmax": [1.5 * n, 3 * n],
             "bid": [[[0, alpha * 1.5 * n, -alpha]], [[0, alpha * 3 * n, -alpha]]]},
            {"id": "S", "node": "n1", "kind": "generator", "firm": "g'", "pmin": 0, "pmax": 5 * n,
             "ramp_up": n, "bid": [[[0, 7 * c * n / 4, 0]], [[0, c * n, 0]]]},
            {"id": "G", "node": "n1", "kind": "firm-injection", "firm": "g", "pmin": 0,
             "pmax": n / 8 if firm_cap is None else firm_cap},
        ],
        "reference_node": "n1",
        "firm_of_interest": "g",
    }


def _single_node(load):
    return {
        "hours": 1,
        "nodes": ["n1"],
        "lines": [],
        "units": [
            load,
            {"id": "S", "node": "n1", "kind": "generator", "firm": "s", "pmin": 0, "pmax": 200,
             "bid": [[0, 1.0, 0.1]]},
            {"id": "G", "node": "n1", "kind": "firm-injection", "firm": "g", "pmin": 0, "pmax": 5},
        ],
        "reference_node": "n1",
        "firm_of_interest": "g",
    }


BUILTINS = {
    "ramp2h": ramp2h_doc,
    "single-node-linear": lambda: _single_node(
        {"id": "D", "node": "n1", "kind": "load", "firm": "consumers", "pmin": 10, "pmax": 10}),
    "single-node-elastic": lambda: _single_node(
        {"id": "D", "node": "n1", "kind": "load", "firm": "consumers", "pmin": 0, "pmax": 100,
         "bid": [[0, 20.0, -0.2]]}),
    "dc3": lambda: {
        "hours": 1,
        "nodes": ["A", "B", "C"],
        "lines": [
            {"from": "A", "to": "B", "susceptance": 10.0},
            {"from": "B", "to": "C", "susceptance": 10.0, "limit": 100.0},
            {"from": "C", "to": "A", "susceptance": 10.0},
        ],
        "units": [
            {"id": "GA", "node": "A", "kind": "generator", "firm": "g", "pmin": 0, "pmax": 100,
             "bid": [[0, 10.0, 0.1]]},
            {"id": "SB", "node": "B", "kind": "generator", "firm": "s", "pmin": 0, "pmax": 200,
             "bid": [[0, 5.0, 0.05]]},
            {"id": "DC", "node": "C", "kind": "load", "firm": "consumers", "pmin": 0, "pmax": 300,
             "bid": [[0, 60.0, -0.2]]},
        ],
        "reference_node": "A",
        "firm_of_interest": "g",
    },
    # the firm sets the price: rival at capacity, demand fixed
    "marginal-firm": lambda: {
        "hours": 1,
        "nodes": ["n1"],
        "lines": [],
        "units": [
            {"id": "D", "node": "n1", "kind": "load", "firm": "consumers", "pmin": 10, "pmax": 10},
            {"id": "S", "node": "n1", "kind": "generator", "firm": "s", "pmin": 0, "pmax": 5,
             "bid": [[0, 2.0, 0.0]]},
            {"id": "G", "node": "n1", "kind": "generator", "firm": "g", "pmin": 0, "pmax": 10,
             "bid": [[0, 5.0, 0.1]]},
        ],
        "reference_node": "n1",
        "firm_of_interest": "g",
    },
    # firm with offers; its hour-2 capacity binds at the optimum
    "ramp2h-capped": lambda: {
        **ramp2h_doc(),
        "units": ramp2h_doc()["units"][:2] + [
            {"id": "G", "node": "n1", "kind": "generator", "firm": "g", "pmin": 0, "pmax": [4, 2],
             "bid": [[[0, 6.0, 2.0]], [[0, 5.0, 0.0]]]},
        ],
    },
    # firm's own upward ramp binds and couples its two hours
    "firm-ramp": lambda: {
        "hours": 2,
        "nodes": ["n1"],
        "lines": [],
        "units": [
            {"id": "D", "node": "n1", "kind": "load", "firm": "consumers", "pmin": 0, "pmax": [10, 20],
             "bid": [[[0, 10.0, -1.0]], [[0, 20.0, -1.0]]]},
            {"id": "G", "node": "n1", "kind": "generator", "firm": "g", "pmin": 0, "pmax": 20,
             "ramp_up": 8, "bid": [[0, 2.0, 0.0]]},
        ],
        "reference_node": "n1",
        "firm_of_interest": "g",
    },
    # two-node line with quadratic losses
    "loss2": lambda: {
        "hours": 1,
        "nodes": ["A", "B"],
        "lines": [{"from": "A", "to": "B", "susceptance": 10.0, "loss": 0.002}],
        "units": [
            {"id": "GA", "node": "A", "kind": "generator", "firm": "g", "pmin": 0, "pmax": 100,
             "bid": [[0, 5.0, 0.1]]},
            {"id": "DB", "node": "B", "kind": "load", "firm": "consumers", "pmin": 0, "pmax": 200,
             "bid": [[0, 50.0, -0.5]]},
            {"id": "SB", "node": "B", "kind": "generator", "firm": "s", "pmin": 0, "pmax": 100,
             "bid": [[0, 8.0, 0.2]]},
        ],
        "reference_node": "A",
        "firm_of_interest": "g",
    },
}


def builtin_names():
    return sorted(BUILTINS)


def builtin_document(name):
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ScenarioError(f"unknown builtin scenario {name!r}; choose from {', '.join(builtin_names())}",
                            entity=name) from None
    return factory()


def builtin_scenario(name) -> Scenario:
    """Return the pinned fixture ``name`` (see :func:`builtin_names`)."""
    s = scenario_from_dict(builtin_document(name))
    assert not validate_scenario(s), name
    return s


def random_scenario_doc(seed):
    """Seeded random convex scenario: 2-3 nodes, 1-4 hours, quadratic bids."""
    rng = np.random.default_rng(seed)
    n_nodes = int(rng.integers(2, 4))
    hours = int(rng.integers(1, 5))
    nodes = [f"n{i}" for i in range(n_nodes)]
    profile = rng.uniform(0.7, 1.3, size=hours)

    units = [
        {"id": "G", "node": "n0", "kind": "generator", "firm": "g", "pmin": 0,
         "pmax": float(rng.uniform(60, 120)),
         "bid": [[[0, float(rng.uniform(5, 15)), float(rng.uniform(0.05, 0.3))]] for _ in range(hours)]},
        {"id": "D1", "node": "n1", "kind": "load", "firm": "consumers", "pmin": 0, "pmax": 400,
         "bid": [[[0, float(60 * f), -float(rng.uniform(0.2, 0.6))]] for f in profile]},
    ]
    rival_nodes = ["n1"] if n_nodes == 2 else ["n2"]
    for k, node in enumerate(rival_nodes):
        unit = {"id": f"S{k + 1}", "node": node, "kind": "generator", "firm": f"r{k + 1}", "pmin": 0,
                "pmax": float(rng.uniform(40, 120)),
                "bid": [[0, float(rng.uniform(5, 20)), float(rng.uniform(0.05, 0.3))]]}
        if hours > 1 and rng.random() < 0.5:
            unit["ramp_up"] = float(rng.uniform(3, 20))
            unit["ramp_down"] = float(rng.uniform(3, 20))
        units.append(unit)

    pairs = [("n0", "n1")] if n_nodes == 2 else [("n0", "n1"), ("n1", "n2"), ("n2", "n0")]
    lines = []
    for a, b in pairs:
        line = {"from": a, "to": b, "susceptance": float(rng.uniform(5, 20))}
        if rng.random() < 0.5:
            line["limit"] = float(rng.uniform(20, 80))
        lines.append(line)
    return {"hours": hours, "nodes": nodes, "lines": lines, "units": units,
            "reference_node": "n0", "firm_of_interest": "g"}


def random_scenario(seed) -> Scenario:
    return scenario_from_dict(random_scenario_doc(seed))
