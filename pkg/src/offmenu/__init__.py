"""Dynamic delegation with strategic (off-menu) participation.

Synthesis of coupling policies and cutoff off-switches from a task policy,
plus exact brute-force verification of the resulting incentive properties
on discretized instances.
"""

from .model import BaseGame, DynamicsModel, GameError, Grid, RewardModel, ShockModel
from .mechanism import BoundaryProfile, Mechanism, TaskPolicy
from .histories import ProfileConjecture, RegionConjecture, TreeWalker
from .equilibrium import Engine
from .oracle import TreeOracle
from .carrier import CarrierTables
from .persistence import PersistenceTransforms
from .regions import RegionPartition, partition_from_boundary
from .synthesis import synthesize_mechanism
from .scenario import Scenario, load_scenario
from .run import run_scenario

__all__ = [
    "BaseGame", "DynamicsModel", "GameError", "Grid", "RewardModel", "ShockModel",
    "BoundaryProfile", "Mechanism", "TaskPolicy",
    "ProfileConjecture", "RegionConjecture", "TreeWalker",
    "Engine", "TreeOracle", "CarrierTables", "PersistenceTransforms",
    "RegionPartition", "partition_from_boundary",
    "synthesize_mechanism", "Scenario", "load_scenario", "run_scenario",
]

__version__ = "0.1.0"
