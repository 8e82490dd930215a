"""Nodal electricity-market clearing and price-response analysis."""

from .errors import (AssemblyError, InfeasibleError, InvalidPartitionError, MarginalOfferError,
                     MaxIterationsError, NodalPriceError, NonsmoothPointError, ScenarioError,
                     SingularBorderedHessianError)
from .estimator import NodalPriceResponse
from .model import (BidCurve, NetworkLine, Problem, Scenario, Unit, assemble_problem, load_scenario,
                    parse_scenario, scenario_from_dict, scenario_to_dict, serialize_scenario,
                    validate_scenario)
from .propositions import HourPartition, PropositionReport, check_prop1, check_prop2
from .scenarios import builtin_names, builtin_scenario, random_scenario
from .sensitivity import (ResponseMatrix, markup, response_matrix_fd, response_matrix_kkt,
                          response_matrix_projection, value_function, value_gradient_fd)
from .solver import (Solution, SolverOptions, binding_set, lmp_table, solve, solve_subproblem)
from .verify import (CrossCheckReport, classify_definiteness, cross_check, eigen, nested_search,
                     symmetry_defect)

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "BidCurve", "CrossCheckReport", "HourPartition", "InfeasibleError",
    "InvalidPartitionError", "MarginalOfferError", "MaxIterationsError", "NetworkLine",
    "NodalPriceError", "NodalPriceResponse", "NonsmoothPointError", "Problem", "PropositionReport",
    "ResponseMatrix", "Scenario", "ScenarioError", "SingularBorderedHessianError", "Solution",
    "SolverOptions", "Unit", "assemble_problem", "binding_set", "builtin_names", "builtin_scenario",
    "check_prop1", "check_prop2", "classify_definiteness", "cross_check", "eigen", "load_scenario",
    "lmp_table", "markup", "nested_search", "parse_scenario", "random_scenario", "response_matrix_fd",
    "response_matrix_kkt", "response_matrix_projection", "scenario_from_dict", "scenario_to_dict",
    "serialize_scenario", "solve", "solve_subproblem", "symmetry_defect", "validate_scenario",
    "value_function", "value_gradient_fd",
]
