"""Coordinated dispatch of flexible load ensembles on radial feeders.

Per-bus load ensembles are optimized as finite-horizon controlled Markov
chains with a relative-entropy comfort penalty; a linearized branch-flow
network model enforces voltage and injection limits; two dual-decomposition
variants couple the two through per-bus, per-step multipliers.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .coordinator import (DualState, NetworkDispatch, Solution, residuals, run)
from .errors import (CaseParseError, ConfigError, DivergenceError, FlexDispatchError,
                     InfeasibleError, KernelError, ModelError, RadialityError,
                     SupportViolationError)
from .grid import Branch, Bus, GridModel, TreeOrder, validate_radial
from .matpower import parse_matpower, serialize_grid
from .mdp import (EffectiveCost, EnsembleSpec, MdpTrajectory, backward_step_row,
                  effective_utility, kl_stage_cost, propagate, solve_mdp)
from .network import (NetworkOperators, StepDispatch, dispatch_step_dual,
                      dispatch_step_pinned, losses, tree_flows, voltages)
from .scenario import DualOptions, ScenarioSpec, load_scenario
from .stats import (AggregateMoments, aggregate_moments, apparent_power,
                    ks_distance_normal, replicate_study, sample_aggregate)

__all__ = [
    "KERNEL_BACKEND", "__version__",
    "Branch", "Bus", "GridModel", "TreeOrder", "validate_radial",
    "parse_matpower", "serialize_grid",
    "EnsembleSpec", "EffectiveCost", "MdpTrajectory", "propagate",
    "effective_utility", "kl_stage_cost", "backward_step_row", "solve_mdp",
    "NetworkOperators", "StepDispatch", "tree_flows", "voltages", "losses",
    "dispatch_step_dual", "dispatch_step_pinned",
    "DualState", "NetworkDispatch", "Solution", "run", "residuals",
    "DualOptions", "ScenarioSpec", "load_scenario",
    "AggregateMoments", "aggregate_moments", "sample_aggregate", "apparent_power",
    "ks_distance_normal", "replicate_study",
    "FlexDispatchError", "CaseParseError", "ModelError", "RadialityError",
    "ConfigError", "SupportViolationError", "KernelError", "InfeasibleError",
    "DivergenceError",
]
