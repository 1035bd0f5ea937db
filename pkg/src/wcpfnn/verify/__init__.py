"""Exact worst-case verification of ReLU generation networks."""
from .bounds import ACTIVE, INACTIVE, LayerBounds, interval_bounds, interval_bounds_scaled, output_bounds
from .lp import INFEASIBLE, OPTIMAL, LPError, LPResult, StandardLP
from .milp import (BudgetExhausted, MilpConfig, MilpModel, MilpResult, ModelBuilder,
                   solve_lp, solve_milp_bnb)
from .worstcase import (LOWER, UPPER, Encoding, HypercubeResult, VerifierConfig,
                        WorstCaseResult, demand_to_u, encode_worstcase, find_worst_case,
                        fit_hypercube, fix_relu_statuses, report_dict, report_json,
                        u_to_demand, violation)

__all__ = [n for n in dir() if not n.startswith("_")]
