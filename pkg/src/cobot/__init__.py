"""Supportive-action planning for human-robot collaboration.

Author a hierarchical task model, compile it into a factored generative
POMDP, and plan supportive actions (bring, clean up, hold, wait) online with
Monte-Carlo tree search over particle beliefs.
"""
from .htm import (
    ALWAYS,
    Gate,
    Htm,
    HtmError,
    Leaf,
    LeafSpec,
    ObjectClass,
    ObjectDef,
    Operator,
    alternative,
    leaf_info,
    linearize,
    make_leaf,
    make_step_leaf,
    micro_leaf_count,
    parallel,
    parse_htm,
    parse_htm_file,
    sequence,
    serialize_htm,
    validate_htm,
)
from .model import (
    GenerativeModel,
    NoiseConfig,
    RewardParams,
    WorldState,
    collapse_obs,
    compile_model,
    is_terminal,
    obs_label,
    sample_initial,
    sample_step,
)
from .planner import (
    Belief,
    BeliefSummary,
    SearchConfig,
    belief_marginals,
    initial_belief,
    plan_action,
    update_belief,
)
from .baselines import FixedSupportPolicy, RandomSupportPolicy, RepeatPolicy
from .benchmarks import BENCHMARK_NAMES, build_benchmark
from .harness import (
    BatchStats,
    EnvConfig,
    EpisodeRecord,
    PomcpPolicy,
    POLICY_IDS,
    SweepCell,
    make_policy,
    preference_sweep,
    run_batch,
    run_episode,
)

__version__ = "0.1.0"
