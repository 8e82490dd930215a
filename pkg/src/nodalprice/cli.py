"""Command-line front end: ``nodalprice {solve,sense,check,verify}``.

Exit codes: 0 ok, 1 input error, 2 infeasible or unsolved, 3 nonsmooth
point, 4 no guarantee, 5 invalid partition, 6 tolerance breach.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass

import numpy as np

from .errors import (AssemblyError, InfeasibleError, InvalidPartitionError, MarginalOfferError,
                     MaxIterationsError, NonsmoothPointError, ScenarioError, SingularBorderedHessianError)
from .model import assemble_problem, load_scenario
from .propositions import HourPartition, check_prop1, check_prop2, firm_dispatch
from .scenarios import builtin_names, builtin_scenario
from .sensitivity import response_matrix_fd, response_matrix_kkt, response_matrix_projection
from .solver import SolverOptions, binding_set, lmp_table, solve, solve_subproblem
from .verify import Tolerances, classify_definiteness, cross_check, eigen, symmetry_defect

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NONSMOOTH = 0, 1, 2, 3
EXIT_NO_GUARANTEE, EXIT_PARTITION, EXIT_TOLERANCE = 4, 5, 6

ROUTES = {"kkt": response_matrix_kkt, "projection": response_matrix_projection, "fd": None}


@dataclass
class RunConfig:
    command: str
    builtin: str | None
    scenario: str | None
    x: list | None
    fmt: str
    output: str | None
    options: SolverOptions
    fd_step: float | None = None
    routes: tuple = ("kkt", "projection", "fd")
    radius: float | None = None
    trials: int | None = None
    seed: int = 0
    hat: tuple = ()
    offers: bool = True
    tolerances: Tolerances | None = None


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="nodalprice", description="Nodal market clearing and price response tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=builtin_names(), help="pinned fixture name")
    src.add_argument("--scenario", metavar="PATH", help="scenario JSON file")
    common.add_argument("--x", type=_floats, help="firm injections, comma separated (default: full-market dispatch)")
    common.add_argument("--format", dest="fmt", choices=("text", "json", "csv"), default="text")
    common.add_argument("--output", "-o", metavar="PATH", help="write the report here instead of stdout")
    common.add_argument("--tol", type=float, default=1e-9, help="KKT tolerance (default 1e-9)")
    common.add_argument("--act-tol", type=float, default=1e-7, help="activity tolerance (default 1e-7)")
    common.add_argument("--max-iter", type=int, default=500, help="active-set iteration cap (default 500)")

    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--radius", type=float, help="stability probe radius (default 1e-4 max(1, |x|))")
    probe.add_argument("--trials", type=int, help="stability probe count (default 2k + 4)")
    probe.add_argument("--seed", type=int, default=0, help="probe seed (default 0)")

    sub.add_parser("solve", parents=[common], help="clear the market (residual market when --x is given)")

    p = sub.add_parser("sense", parents=[common], help="price response matrix")
    p.add_argument("--route", default="kkt,projection,fd", help="comma list of kkt, projection, fd")
    p.add_argument("--fd-step", type=float, help="central difference step (default 1e-5 max(1, |x|))")

    p = sub.add_parser("check", parents=[common, probe], help="check the sufficient conditions")
    p.add_argument("--hat", default="", help="firm slots kept free, e.g. n1@2 (all-hours check when empty)")
    p.add_argument("--no-offer-check", action="store_true", help="skip the offer-independence re-solves")

    p = sub.add_parser("verify", parents=[common, probe], help="cross-route consistency report")
    p.add_argument("--fd-step", type=float)
    p.add_argument("--paths-tol", type=float, default=1e-9)
    p.add_argument("--fd-tol", type=float, default=1e-4)
    p.add_argument("--sym-tol", type=float, default=1e-8)
    p.add_argument("--gap-tol", type=float, default=1e-6)
    return parser


def config_from_args(args) -> RunConfig:
    cfg = RunConfig(args.command, args.builtin, args.scenario, args.x, args.fmt, args.output,
                    SolverOptions(tol=args.tol, act_tol=args.act_tol, max_iter=args.max_iter))
    if args.command == "sense":
        routes = tuple(r.strip() for r in args.route.split(",") if r.strip())
        bad = [r for r in routes if r not in ROUTES]
        if bad or not routes:
            raise ValueError(f"unknown route(s) {bad}; choose from kkt, projection, fd")
        cfg.routes = routes
    if args.command in ("sense", "verify"):
        cfg.fd_step = args.fd_step
    if args.command in ("check", "verify"):
        cfg.radius, cfg.trials, cfg.seed = args.radius, args.trials, args.seed
    if args.command == "check":
        cfg.hat = tuple(h.strip() for h in args.hat.split(",") if h.strip())
        cfg.offers = not args.no_offer_check
    if args.command == "verify":
        cfg.tolerances = Tolerances(args.paths_tol, args.fd_tol, args.sym_tol, args.gap_tol)
    return cfg


# ---------------------------------------------------------------------------
# rendering


def _csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _matrix_text(labels, M):
    width = max(len(lab) for lab in labels)
    lines = [" " * width + "  " + "  ".join(f"{lab:>14}" for lab in labels)]
    for lab, row in zip(labels, M):
        lines.append(f"{lab:>{width}}  " + "  ".join(f"{v:>14.10g}" for v in row))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# commands


def _problem(cfg):
    s = builtin_scenario(cfg.builtin) if cfg.builtin else load_scenario(cfg.scenario)
    return assemble_problem(s)


def _x(cfg, problem):
    if cfg.x is None:
        return firm_dispatch(problem, cfg.options)[0]
    return np.asarray(cfg.x, dtype=float)


def cmd_solve(cfg):
    problem = _problem(cfg)
    if cfg.x is None:
        sol = solve(problem, cfg.options)
        if not sol.ok:
            return EXIT_INFEASIBLE, _render_failure(cfg, sol)
        reduced = problem
    else:
        sol, _, sub = solve_subproblem(problem, cfg.x, (), cfg.options)
        reduced = sub.problem
    prices = lmp_table(sol)
    binding = [str(t) for t in binding_set(reduced, sol, cfg.options.act_tol).tags]
    dispatch = {v.name: float(val) for v, val in zip(reduced.variables, sol.z) if v.kind == "q"}
    doc = {"status": sol.status, "objective": sol.objective,
           "firm_injections": None if cfg.x is None else [float(v) for v in cfg.x],
           "dispatch": dispatch,
           "lmp": [{"node": n, "hour": h, "price": p} for (n, h), p in prices.items()],
           "binding": binding, "residuals": sol.residuals}
    if cfg.fmt == "json":
        return EXIT_OK, json.dumps(doc, indent=2)
    if cfg.fmt == "csv":
        return EXIT_OK, _csv([["node", "hour", "price"]] + [[n, h, repr(p)] for (n, h), p in prices.items()]).rstrip("\n")
    lines = [f"status: {sol.status}", f"objective: {sol.objective:.10g}", "dispatch:"]
    lines += [f"  {k:<16} {v:>14.8g}" for k, v in dispatch.items()]
    lines.append("nodal prices:")
    lines += [f"  {n}@{h:<12} {p:>14.10g}" for (n, h), p in prices.items()]
    lines.append("binding: " + ", ".join(binding))
    return EXIT_OK, "\n".join(lines)


def _render_failure(cfg, sol):
    doc = {"status": sol.status, "violation": sol.violation}
    if cfg.fmt == "json":
        return json.dumps(doc, indent=2)
    return f"status: {sol.status} (total violation {sol.violation:.6g})"


def cmd_sense(cfg):
    problem = _problem(cfg)
    x = _x(cfg, problem)
    mats = {}
    for route in cfg.routes:
        if route == "fd":
            mats[route] = response_matrix_fd(problem, x, cfg.fd_step, (), cfg.options)
        else:
            mats[route] = ROUTES[route](problem, x, (), cfg.options)
    first = mats[cfg.routes[0]]
    labels, M = first.labels, first.values
    w, _ = eigen(M)
    summary = {"symmetry_defect": symmetry_defect(M), "eigenvalues": w.tolist(),
               "definiteness": classify_definiteness(M)}
    if cfg.fmt == "json":
        doc = {"labels": labels, "x": [float(v) for v in x],
               "routes": {r: m.values.tolist() for r, m in mats.items()}, **summary}
        if "projection" in mats:
            doc["projection_parts"] = {k: v.tolist() for k, v in mats["projection"].parts.items()}
        return EXIT_OK, json.dumps(doc, indent=2)
    if cfg.fmt == "csv":
        blocks = []
        for r, m in mats.items():
            blocks.append(_csv([[r] + list(labels)] + [[lab] + [repr(float(v)) for v in row]
                                                       for lab, row in zip(labels, m.values)]))
        return EXIT_OK, "\n".join(blocks).rstrip("\n")
    lines = [f"x: {', '.join(f'{v:.8g}' for v in x)}"]
    for r, m in mats.items():
        lines += [f"{r}:", _matrix_text(labels, m.values)]
    lines += [f"symmetry defect: {summary['symmetry_defect']:.3e}",
              "eigenvalues: " + ", ".join(f"{v:.10g}" for v in w),
              f"class: {summary['definiteness']}"]
    return EXIT_OK, "\n".join(lines)


def cmd_check(cfg):
    problem = _problem(cfg)
    kwargs = dict(radius=cfg.radius, trials=cfg.trials, seed=cfg.seed, check_offers=cfg.offers, options=cfg.options)
    if cfg.hat:
        report = check_prop2(problem, HourPartition.from_hat(problem, cfg.hat), cfg.x, **kwargs)
    else:
        report = check_prop1(problem, cfg.x, **kwargs)
    code = EXIT_OK if report.passed else EXIT_NO_GUARANTEE
    if cfg.fmt == "json":
        return code, report.to_json()
    rows = [[k, v["status"]] for k, v in report.verdicts.items()]
    if cfg.fmt == "csv":
        return code, _csv([["check", "status"]] + rows + [["guarantee", report.guarantee]]).rstrip("\n")
    lines = [f"slots: {', '.join(report.labels)}", f"x: {', '.join(f'{v:.8g}' for v in report.x)}"]
    lines += [f"  {k:<20} {s}" for k, s in rows]
    fails = report.verdicts["binding_stability"].get("failures", [])
    if fails:
        lines.append(f"  probe failures: {len(fails)} of {report.trials}")
    lines.append(f"guarantee: {report.guarantee}")
    if "response_matrix" in report.diagnostics:
        lines.append(_matrix_text(report.labels, np.asarray(report.diagnostics["response_matrix"])))
    return code, "\n".join(lines)


def cmd_verify(cfg):
    problem = _problem(cfg)
    x = _x(cfg, problem)
    report = check_prop1(problem, x, radius=cfg.radius, trials=cfg.trials, seed=cfg.seed, options=cfg.options)
    cc = cross_check(problem, x, cfg.fd_step, cfg.tolerances, report, cfg.options)
    code = EXIT_OK if cc.passed else EXIT_TOLERANCE
    if cfg.fmt == "json":
        return code, cc.to_json()
    if cfg.fmt == "csv":
        rows = [["metric", "value"]] + [[k, repr(v)] for k, v in cc.deviations.items()]
        rows += [["symmetry_defect", repr(cc.symmetry_defect)], ["definiteness", cc.definiteness],
                 ["objective_gap", repr(cc.objective_gap)], ["guarantee", cc.guarantee],
                 ["passed", cc.passed]]
        return code, _csv(rows).rstrip("\n")
    return code, cc.to_text()


COMMANDS = {"solve": cmd_solve, "sense": cmd_sense, "check": cmd_check, "verify": cmd_verify}


def _execute(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_OK if exc.code == 0 else EXIT_INPUT), "", None
    output = args.output
    try:
        cfg = config_from_args(args)
        code, text = COMMANDS[cfg.command](cfg)
    except InvalidPartitionError as exc:
        return EXIT_PARTITION, f"error: invalid partition: {exc}", None
    except (ScenarioError, AssemblyError, OSError) as exc:
        return EXIT_INPUT, f"error: {exc}", None
    except (InfeasibleError, MaxIterationsError) as exc:
        return EXIT_INFEASIBLE, f"error: {exc}", None
    except (NonsmoothPointError, SingularBorderedHessianError, MarginalOfferError) as exc:
        return EXIT_NONSMOOTH, f"error: nonsmooth point: {exc}", None
    except ValueError as exc:
        return EXIT_INPUT, f"error: {exc}", None
    return code, text, output


def run(argv=None):
    """Parse ``argv``, run the command and return ``(exit_code, text)``.

    Errors are reported as text starting with ``error:``.
    """
    code, text, _ = _execute(argv)
    return code, text


def main(argv=None):
    code, text, output = _execute(argv)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    elif text:
        print(text, file=sys.stderr if text.startswith("error:") else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
