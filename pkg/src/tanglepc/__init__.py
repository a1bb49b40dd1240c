"""Tangle (DAG ledger) simulation, approver statistics and parasite-chain detection."""

from .analytic import ModelParams, ProbabilityVector, g, lambda_u, p_u, p_urw, p_urw_star, tip_count
from .detection import (
    Calibration,
    DetectorConfig,
    InsufficientSample,
    Metric,
    SampleWindow,
    calibrate_eta,
    cone_detect,
    distance_dp,
    distance_dq,
    empirical_distribution,
    guarded_tip_selection,
    walk_detect_step,
)
from .parasite import AttackKind, AttackReport, AttackSpec, build, build_mimic, build_pc1, build_spc, effective_rate
from .simulator import (
    SimConfig,
    Simulation,
    fit_linear_exit,
    measure_approver_distribution,
    measure_exit_profile,
    run,
    simulate,
)
from .tangle import EdgePolicy, Provenance, Tangle, TangleError, Transaction
from .tipselect import WalkConfig, exit_distribution, urts_select, walk_select

__version__ = "0.1.0"

__all__ = [
    "AttackKind", "AttackReport", "AttackSpec", "Calibration", "DetectorConfig", "EdgePolicy",
    "InsufficientSample", "Metric", "ModelParams", "ProbabilityVector", "Provenance", "SampleWindow",
    "SimConfig", "Simulation", "Tangle", "TangleError", "Transaction", "WalkConfig",
    "build", "build_mimic", "build_pc1", "build_spc", "calibrate_eta", "cone_detect",
    "distance_dp", "distance_dq", "effective_rate", "empirical_distribution", "exit_distribution",
    "fit_linear_exit", "g", "guarded_tip_selection", "lambda_u", "measure_approver_distribution",
    "measure_exit_profile", "p_u", "p_urw", "p_urw_star", "run", "simulate", "tip_count",
    "urts_select", "walk_detect_step", "walk_select",
]
