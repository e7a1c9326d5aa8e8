"""Trajectory-structured replay for offline RL.

Stores offline data as whole trajectories, emits each active trajectory's
transitions in backward time order, selects new trajectories by rank-based
priority metrics (reward quality or ensemble uncertainty), and supports
cached recursive / weighted critic targets.  A tabular TD learner and CLI
verify the machinery at desk scale.
"""

from .dataset import (
    FLAT_TRANSITIONS,
    TRAJECTORY_JSONL,
    OfflineDataset,
    Trajectory,
    Transition,
    flatten_trajectories,
    load_dataset,
    normalized_score,
    save_dataset,
    split_flat_transitions,
)
from .learner import (
    PRIO_STATE,
    PRIO_TRAJ,
    SAMPLERS,
    UNI_STATE,
    UNI_TRAJ,
    EnsembleQ,
    TrainConfig,
    TrainResult,
    steps_to_threshold,
    train,
    value_iteration_oracle,
)
from .priority import (
    ALL_KINDS,
    QUALITY_KINDS,
    UNCERTAINTY_KINDS,
    UNIFORM_KIND,
    PrioritizedSelector,
    PriorityTable,
    build_priority_table,
    prioritized_select,
    quality_priority,
    rank_distribution,
    rank_order,
    refresh_uncertainty_priority,
    trajectory_priority,
    uncertainty_priority,
)
from .replay import (
    BatchItem,
    PerTransitionSampler,
    SumTree,
    TrajectoryReplay,
    UniformSelector,
    UniformTransitionSampler,
    per_priority,
    uniform_transition_sample,
)
from .scenarios import make_figure1, make_random_chain
from .targets import (
    TargetCache,
    TargetKind,
    compute_target,
    sarsa_target,
    standard_target,
    weighted_target,
)

__version__ = "0.1.0"
