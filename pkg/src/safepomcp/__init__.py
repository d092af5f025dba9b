"""Safe online planning for POMDPs with reach-avoid objectives.

The package couples a particle-based online planner with shields derived
from belief-support winning regions: sets of belief supports from which the
avoid states can be dodged surely while the reach states are hit with
probability one.  Regions can be computed on the full model or assembled
from per-room submodels of a factored state space.
"""

from .model import (
    DanglingIdError,
    ModelError,
    NonAbsorbingReachError,
    Pomdp,
    ProbabilitySumError,
    SimStep,
    SpecConflictError,
    make_pomdp,
    mask_from_states,
    sample_initial,
    sample_step,
    states_from_mask,
    successors_mask,
    support_post,
    support_post_all,
)
from .modelio import (
    ModelSyntaxError,
    dump_model,
    load_model,
    model_hash,
    parse_model,
    serialize_model,
)
from .domains import (
    DomainError,
    GridSpec,
    cell_name,
    factored_gap_world,
    gen_obstacle,
    gen_refuel,
    gen_rocksample,
    render_layout,
)
from .winning import (
    GraphCapExceeded,
    RegionFileError,
    RegionMisuseError,
    RegionTimeout,
    Spec,
    SupportGraph,
    WinningRegion,
    WitnessError,
    allowed_actions,
    antichain,
    build_support_graph,
    compute_winning_region,
    parse_region,
    powerset_supports,
    productivity_witness,
    region_contains,
    serialize_region,
    winning_masks,
)
from .factored import (
    FactoredRegion,
    Submodel,
    decompose,
    factored_elements_in_parent,
    factored_witness,
    parse_factored,
    propagate_factored_regions,
    serialize_factored,
    union_allowed_actions,
    union_contains,
)
from .pomcp import (
    BeliefCollapseError,
    DeadNodeError,
    ImpossibleObservationError,
    Node,
    NoSafeActionError,
    PlannerConfig,
    advance_root,
    make_root,
    plan_step,
    ucb_select,
)
from .shield import (
    InternalShieldError,
    SafetyViolation,
    ShieldContext,
    ShieldMode,
    ShieldStats,
    backtrack_check,
    prior_prune,
)
from .harness import (
    DEFAULT_STEP_CAP,
    DESK_PROFILE,
    FULL_PROFILE,
    EpisodeMetrics,
    ExperimentConfig,
    ExperimentReport,
    ModelSource,
    RegionBuild,
    UnwinningStartError,
    obtain_region,
    run_episode,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "BeliefCollapseError",
    "DEFAULT_STEP_CAP",
    "DESK_PROFILE",
    "DanglingIdError",
    "DeadNodeError",
    "DomainError",
    "EpisodeMetrics",
    "ExperimentConfig",
    "ExperimentReport",
    "FULL_PROFILE",
    "FactoredRegion",
    "GraphCapExceeded",
    "GridSpec",
    "ImpossibleObservationError",
    "InternalShieldError",
    "ModelError",
    "ModelSource",
    "ModelSyntaxError",
    "NoSafeActionError",
    "Node",
    "NonAbsorbingReachError",
    "PlannerConfig",
    "Pomdp",
    "ProbabilitySumError",
    "RegionBuild",
    "RegionFileError",
    "RegionMisuseError",
    "RegionTimeout",
    "SafetyViolation",
    "ShieldContext",
    "ShieldMode",
    "ShieldStats",
    "SimStep",
    "Spec",
    "SpecConflictError",
    "Submodel",
    "SupportGraph",
    "UnwinningStartError",
    "WinningRegion",
    "WitnessError",
    "advance_root",
    "allowed_actions",
    "antichain",
    "backtrack_check",
    "build_support_graph",
    "cell_name",
    "compute_winning_region",
    "decompose",
    "dump_model",
    "factored_elements_in_parent",
    "factored_gap_world",
    "factored_witness",
    "gen_obstacle",
    "gen_refuel",
    "gen_rocksample",
    "load_model",
    "make_pomdp",
    "make_root",
    "mask_from_states",
    "model_hash",
    "obtain_region",
    "parse_factored",
    "parse_model",
    "parse_region",
    "plan_step",
    "powerset_supports",
    "prior_prune",
    "productivity_witness",
    "propagate_factored_regions",
    "region_contains",
    "render_layout",
    "run_episode",
    "run_experiment",
    "sample_initial",
    "sample_step",
    "serialize_factored",
    "serialize_model",
    "serialize_region",
    "states_from_mask",
    "successors_mask",
    "support_post",
    "support_post_all",
    "ucb_select",
    "union_allowed_actions",
    "union_contains",
    "winning_masks",
    "__version__",
]
