"""Energy-efficient association, subchannel and power optimisation for multi-UAV NOMA downlinks."""
from .assoc import AssociationInfeasible, AssociationSolverError, run_two_stage
from .channel import GainTables, build_gain_tables
from .experiment import CampaignSpec, emit_results, generate_scenario, run_campaign
from .iaspo import RunRecord, RunStatus, initial_power, run_asoo, run_iaspo, run_iaspo_fdma
from .milp import MilpProblem, MilpSolution, solve_lp, solve_milp
from .model import AlgoConfig, ChannelParams, Scenario, SystemParams, dbm_to_watt, watt_to_dbm
from .rates import Assignment, EvalReport, PowerAlloc, evaluate, resolve_roles
from .scapower import FeasibilityRestorationFailed, sca_power_step, solve_convex

__all__ = [
    "AlgoConfig", "Assignment", "AssociationInfeasible", "AssociationSolverError", "CampaignSpec",
    "ChannelParams", "EvalReport", "FeasibilityRestorationFailed", "GainTables", "MilpProblem",
    "MilpSolution", "PowerAlloc", "RunRecord", "RunStatus", "Scenario", "SystemParams",
    "build_gain_tables", "dbm_to_watt", "emit_results", "evaluate", "generate_scenario",
    "initial_power", "resolve_roles", "run_asoo", "run_campaign", "run_iaspo", "run_iaspo_fdma",
    "run_two_stage", "sca_power_step", "solve_convex", "solve_lp", "solve_milp", "watt_to_dbm",
]
