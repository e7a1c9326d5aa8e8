"""Desk-scale tabular TD learner wiring replay, priorities, and targets together.

The learner keeps an ensemble of K tabular Q functions (plus synced target
copies).  Greedy actions and values use the ensemble mean; per-pair
uncertainty is the population standard deviation across members.  ``train``
runs one fully seeded, single-threaded experiment and records the learning
curve of ``max_a Q_mean(s0, a)`` after every update;
``value_iteration_oracle`` provides the exact value it should converge to on
the empirical MDP.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import OfflineDataset
from .priority import (
    ALL_KINDS,
    UNCERTAINTY_KINDS,
    UNIFORM_KIND,
    PrioritizedSelector,
    build_priority_table,
    uncertainty_priority_from_values,
)
from .replay import (
    BatchItem,
    PerTransitionSampler,
    TrajectoryReplay,
    UniformSelector,
    UniformTransitionSampler,
)
from .targets import STANDARD, TargetCache, TargetKind, compute_target

UNI_STATE = "uni_state"
PRIO_STATE = "prio_state"
UNI_TRAJ = "uni_traj"
PRIO_TRAJ = "prio_traj"
SAMPLERS = (UNI_STATE, PRIO_STATE, UNI_TRAJ, PRIO_TRAJ)


class EnsembleQ:
    """K tabular Q functions over a discrete state/action grid.

    Member tables start i.i.d. uniform in [0, 0.1] so the ensemble spread is
    non-degenerate before any learning; target tables start as exact copies
    and are refreshed by full copy every ``target_sync_period`` updates.
    """

    def __init__(
        self,
        state_count: int,
        action_count: int,
        ensemble_size: int = 5,
        eta: float = 0.1,
        target_sync_period: int = 100,
        rng: np.random.Generator | None = None,
    ) -> None:
        if ensemble_size < 1:
            raise ValueError(f"ensemble_size must be >= 1, got {ensemble_size}")
        if not 0.0 < eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {eta}")
        if target_sync_period < 1:
            raise ValueError(f"target_sync_period must be >= 1, got {target_sync_period}")
        if rng is None:
            rng = np.random.default_rng()
        self.eta = eta
        self.target_sync_period = target_sync_period
        self.tables = rng.uniform(0.0, 0.1, size=(ensemble_size, state_count, action_count))
        self.target_tables = self.tables.copy()
        self.updates_applied = 0

    @property
    def ensemble_size(self) -> int:
        return self.tables.shape[0]

    def mean_q(self, state: int, action: int) -> float:
        return float(self.tables[:, state, action].mean())

    def target_value(self, state: int, action: int) -> float:
        """Ensemble-mean target-table value (the Qbar read by targets)."""
        return float(self.target_tables[:, state, action].mean())

    def greedy_action(self, state: int) -> int:
        """Argmax of the ensemble-mean row; ties resolve to the lowest action id."""
        return int(np.argmax(self.tables[:, state, :].mean(axis=0)))

    def max_mean_q(self, state: int) -> float:
        return float(self.tables[:, state, :].mean(axis=0).max())

    def uncertainty(self, state: int, action: int) -> float:
        """Population standard deviation of member values at (state, action)."""
        return float(self.tables[:, state, action].std())

    def uncertainty_values(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.tables[:, states, actions].std(axis=0)

    def update(self, items: Sequence[BatchItem], targets: Sequence[float]) -> list[float]:
        """Move every member toward the targets; returns per-item TD errors.

        TD errors are measured against the ensemble-mean Q as it stood before
        this call; duplicate (s, a) pairs within a batch are applied
        sequentially in batch order.
        """
        tables = self.tables
        td_errors = [
            target - float(tables[:, it.transition.state, it.transition.action].mean())
            for it, target in zip(items, targets, strict=True)
        ]
        eta = self.eta
        for it, target in zip(items, targets):
            s, a = it.transition.state, it.transition.action
            col = tables[:, s, a]
            col += eta * (target - col)
        self.updates_applied += 1
        if self.updates_applied % self.target_sync_period == 0:
            self.target_tables[:] = tables
        return td_errors

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            tables=self.tables,
            target_tables=self.target_tables,
            eta=self.eta,
            target_sync_period=self.target_sync_period,
            updates_applied=self.updates_applied,
        )

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleQ":
        data = np.load(path)
        tables = data["tables"]
        ens = cls.__new__(cls)
        ens.eta = float(data["eta"])
        ens.target_sync_period = int(data["target_sync_period"])
        ens.tables = tables
        ens.target_tables = data["target_tables"]
        ens.updates_applied = int(data["updates_applied"])
        return ens


@dataclass
class TrainConfig:
    """One run's knobs: sampling scheme, metric, target rule, and scalars."""

    sampler: str = UNI_TRAJ
    metric: str = UNIFORM_KIND
    target: TargetKind = field(default_factory=TargetKind)
    gamma: float = 0.99
    alpha: float = 1.0
    epsilon: float = 0.01
    eta: float = 0.1
    ensemble_size: int = 5
    batch_size: int = 1
    total_steps: int = 1000
    target_sync_period: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}, expected one of {SAMPLERS}")
        if self.metric not in ALL_KINDS:
            raise ValueError(f"unknown metric kind {self.metric!r}")
        if self.sampler != PRIO_TRAJ:
            # Only prioritized trajectory sampling consumes a metric.
            self.metric = UNIFORM_KIND
        elif self.metric == UNIFORM_KIND:
            raise ValueError("prio_traj requires a non-uniform metric")
        if self.sampler in (UNI_STATE, PRIO_STATE) and self.target.kind != STANDARD:
            raise ValueError(
                f"target kind {self.target.kind!r} needs backward trajectory order; "
                "use uni_traj or prio_traj"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class TrainResult:
    """Learning curve (one point per update), final ensemble, and timing."""

    curve: np.ndarray
    ensemble: EnsembleQ
    wall_ms_per_1000: float


def _trajectory_pair_arrays(dataset: OfflineDataset) -> list[tuple[np.ndarray, np.ndarray]]:
    arrays = []
    for traj in dataset.trajectories:
        states = np.fromiter((tr.state for tr in traj.transitions), dtype=np.int64)
        actions = np.fromiter((tr.action for tr in traj.transitions), dtype=np.int64)
        arrays.append((states, actions))
    return arrays


def train(dataset: OfflineDataset, config: TrainConfig) -> TrainResult:
    """Run one seeded offline-TD experiment; deterministic given (dataset, config)."""
    if config.sampler in (UNI_TRAJ, PRIO_TRAJ) and config.batch_size > dataset.n_trajectories:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds trajectory count {dataset.n_trajectories}"
        )
    rng = np.random.default_rng(config.seed)
    ensemble = EnsembleQ(
        dataset.state_count,
        dataset.action_count,
        config.ensemble_size,
        config.eta,
        config.target_sync_period,
        rng,
    )
    s0 = dataset.trajectories[0].transitions[0].state
    q_bar = ensemble.target_value
    policy = ensemble.greedy_action
    cache = TargetCache()

    uniform_sampler = None
    per_sampler = None
    replay = None
    if config.sampler == UNI_STATE:
        uniform_sampler = UniformTransitionSampler(dataset)
    elif config.sampler == PRIO_STATE:
        per_sampler = PerTransitionSampler(dataset, config.alpha, config.epsilon)
    else:
        if config.metric == UNIFORM_KIND:
            selector = UniformSelector()
        else:
            table = build_priority_table(
                dataset, config.metric, config.alpha, u=ensemble.uncertainty
            )
            priority_fn = None
            if config.metric in UNCERTAINTY_KINDS:
                pair_arrays = _trajectory_pair_arrays(dataset)

                def priority_fn(traj, _arrays=pair_arrays):
                    states, actions = _arrays[traj.id]
                    return uncertainty_priority_from_values(
                        ensemble.uncertainty_values(states, actions), config.metric
                    )

            selector = PrioritizedSelector(table, dataset, priority_fn)
        replay = TrajectoryReplay(dataset, config.batch_size, selector, rng)

    curve = np.empty(config.total_steps)
    kind = config.target
    gamma = config.gamma
    started = time.perf_counter()
    for step in range(config.total_steps):
        if uniform_sampler is not None:
            items = uniform_sampler.sample(config.batch_size, rng)
            leaves = None
        elif per_sampler is not None:
            items, leaves = per_sampler.sample(config.batch_size, rng)
        else:
            items = replay.next_batch()
            leaves = None
        targets = [compute_target(it, kind, cache, q_bar, policy, gamma) for it in items]
        td_errors = ensemble.update(items, targets)
        if per_sampler is not None:
            per_sampler.update_priorities(leaves, td_errors)
        if replay is not None:
            for tid in replay.last_completed:
                cache.clear_trajectory(tid)
        curve[step] = ensemble.max_mean_q(s0)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    return TrainResult(curve, ensemble, elapsed_ms * 1000.0 / config.total_steps)


def steps_to_threshold(
    curve: np.ndarray, oracle_value: float, rel_tol: float
) -> int | None:
    """First 1-based step whose value is within rel_tol of the oracle, else None."""
    band = abs(oracle_value) * rel_tol
    hits = np.flatnonzero(np.abs(curve - oracle_value) <= band)
    return int(hits[0]) + 1 if hits.size else None


def value_iteration_oracle(
    dataset: OfflineDataset, gamma: float | None = None, tol: float = 1e-10
) -> np.ndarray:
    """Optimal state values of the deterministic MDP induced by the dataset.

    Only (s, a) pairs present in the data enter the max; a terminal transition
    contributes its reward with no continuation.  The same (s, a) observed
    with two different outcomes is a conflict error.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if gamma is None:
        gamma = dataset.discount
    outcomes: dict[tuple[int, int], tuple[float, int, bool]] = {}
    by_state: dict[int, list[tuple[float, int, bool]]] = {}
    for tid, t, tr in dataset.iter_transitions():
        key = (tr.state, tr.action)
        outcome = (tr.reward, tr.next_state, tr.terminal)
        seen = outcomes.get(key)
        if seen is None:
            outcomes[key] = outcome
            by_state.setdefault(tr.state, []).append(outcome)
        elif seen != outcome:
            raise ValueError(
                f"non-deterministic data: (state={tr.state}, action={tr.action}) has "
                f"outcomes {seen} and {outcome} (trajectory {tid}, step {t})"
            )
    values = np.zeros(dataset.state_count)
    while True:
        new_values = values.copy()
        for s, outs in by_state.items():
            new_values[s] = max(
                r + (0.0 if terminal else gamma * values[s2]) for r, s2, terminal in outs
            )
        delta = float(np.max(np.abs(new_values - values)))
        values = new_values
        if delta < tol:
            return values
