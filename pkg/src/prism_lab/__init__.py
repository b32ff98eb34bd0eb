"""Desk-scale deterministic simulator for a PCC-preserving hardware L4 load balancer."""

from .analysis import (
    birthday_collision_prob,
    expected_rounds_and_times,
    migration_prob,
    time_between_collisions,
)
from .core import ConnectionKey, SimConfig, Signature, VipRegistry, compute_signature, ecmp_hash
from .cuckoo import CuckooTable, FibEntry, FibTable, InsertOutcome, MctEntry, MctTable
from .dataplane import Dataplane, Flag, ForwardResult, Packet, Via
from .ecmp import (
    DipPool,
    EcmpTable,
    UpdatePlan,
    UpdateReason,
    build_table,
    expand_table,
    plan_add_dip,
    plan_replace_dip,
    plan_reweight,
    plan_take_down,
)
from .engine import PccOracle, Simulation
from .harness import RunResult, run_scenario, sweep
from .scenario_io import parse_scenario_file, parse_scenario_text
from .sct import CloseKind, CloseResult, SctEntry, SctState, SctTable, SynResult
from .workload import Scenario

__all__ = [
    "birthday_collision_prob",
    "expected_rounds_and_times",
    "migration_prob",
    "time_between_collisions",
    "ConnectionKey",
    "SimConfig",
    "Signature",
    "VipRegistry",
    "compute_signature",
    "ecmp_hash",
    "CuckooTable",
    "FibEntry",
    "FibTable",
    "InsertOutcome",
    "MctEntry",
    "MctTable",
    "Dataplane",
    "Flag",
    "ForwardResult",
    "Packet",
    "Via",
    "DipPool",
    "EcmpTable",
    "UpdatePlan",
    "UpdateReason",
    "build_table",
    "expand_table",
    "plan_add_dip",
    "plan_replace_dip",
    "plan_reweight",
    "plan_take_down",
    "PccOracle",
    "Simulation",
    "RunResult",
    "run_scenario",
    "sweep",
    "parse_scenario_file",
    "parse_scenario_text",
    "SctEntry",
    "SctState",
    "SctTable",
    "SynResult",
    "CloseKind",
    "CloseResult",
    "Scenario",
]
