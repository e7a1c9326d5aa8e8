"""Batch samplers over an offline dataset.

Three families live here:

* :class:`TrajectoryReplay` -- the trajectory machine.  ``batch_size`` slots
  each hold one active trajectory and a cursor counting down from the last
  time index; every call emits one transition per slot in backward order.
  Exhausted slots are refilled from the available-id pool by a pluggable
  selector, and when the pool runs dry it is rebuilt from every id not
  currently active (one epoch = one full backward pass over each trajectory).
* :class:`UniformTransitionSampler` -- i.i.d. uniform transition draws with
  replacement, the baseline the trajectory machine is compared against.
* :class:`SumTree` / :class:`PerTransitionSampler` -- proportional prioritized
  transition sampling, priority |TD error| + epsilon raised to alpha.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .dataset import OfflineDataset, Transition


@dataclass(slots=True)
class BatchItem:
    """One sampled transition plus its position inside its trajectory."""

    trajectory_id: int
    time_index: int
    transition: Transition
    is_trajectory_head: bool


class TrajectorySelector(Protocol):
    """Policy that picks which trajectory fills a vacant replay slot."""

    def select(self, candidates: Sequence[int], rng: np.random.Generator) -> int:
        """Return one id from ``candidates`` (must not mutate the sequence)."""
        ...

    def notify_complete(self, trajectory_id: int) -> None:
        """Hook fired when a slot finishes emitting a trajectory."""
        ...


class UniformSelector:
    """Uniform choice among the available trajectory ids."""

    def select(self, candidates: Sequence[int], rng: np.random.Generator) -> int:
        return candidates[int(rng.integers(len(candidates)))]

    def notify_complete(self, trajectory_id: int) -> None:
        pass


class TrajectoryReplay:
    """Backward per-trajectory sampling with selector-driven refill.

    One instance per training run; not thread-safe.  ``next_batch`` always
    returns exactly ``batch_size`` items: vacant slots are refilled at the
    start of the call, and a slot goes vacant at the end of the call in which
    its trajectory emits time index 0.
    """

    def __init__(
        self,
        dataset: OfflineDataset,
        batch_size: int,
        selector: TrajectorySelector,
        rng: np.random.Generator,
    ) -> None:
        n = dataset.n_trajectories
        if not 1 <= batch_size <= n:
            raise ValueError(
                f"batch_size must be in [1, {n}] so no trajectory is active twice, "
                f"got {batch_size}"
            )
        self._trajectories = dataset.trajectories
        self._batch_size = batch_size
        self._selector = selector
        self._rng = rng
        self._epoch = 1
        self._slot_ids = [-1] * batch_size
        self._slot_cursors = [0] * batch_size
        self._completed_last: tuple[int, ...] = ()
        self._available: list[int] = list(range(n))
        self._avail_pos = {j: j for j in self._available}
        self._fill_vacant_slots()

    @property
    def batch_size(self) -> int:
        return self._batch_size

    @property
    def epoch(self) -> int:
        """Count of available-pool refills, starting at 1 for the first pass."""
        return self._epoch

    @property
    def available(self) -> tuple[int, ...]:
        return tuple(self._available)

    @property
    def slots(self) -> tuple[tuple[int, int], ...]:
        """Active (trajectory_id, cursor) pairs; cursor is the next index emitted."""
        return tuple(
            (tid, cur)
            for tid, cur in zip(self._slot_ids, self._slot_cursors)
            if tid != -1
        )

    @property
    def last_completed(self) -> tuple[int, ...]:
        """Ids whose backward pass finished during the last ``next_batch`` call."""
        return self._completed_last

    def _remove_available(self, trajectory_id: int) -> None:
        pos = self._avail_pos.pop(trajectory_id)
        last = self._available.pop()
        if last != trajectory_id:
            self._available[pos] = last
            self._avail_pos[last] = pos

    def _refill_available(self) -> None:
        active = set(self._slot_ids)
        self._available = [
            j for j in range(len(self._trajectories)) if j not in active
        ]
        self._avail_pos = {j: pos for pos, j in enumerate(self._available)}
        self._epoch += 1

    def _fill_vacant_slots(self) -> None:
        for i in range(self._batch_size):
            if self._slot_ids[i] != -1:
                continue
            if not self._available:
                self._refill_available()
            tid = self._selector.select(self._available, self._rng)
            self._remove_available(tid)
            self._slot_ids[i] = tid
            self._slot_cursors[i] = self._trajectories[tid].length - 1

    def next_batch(self) -> list[BatchItem]:
        """Emit one transition per slot at its cursor, then step cursors back."""
        self._fill_vacant_slots()
        trajectories = self._trajectories
        items: list[BatchItem] = []
        completed: list[int] = []
        for i in range(self._batch_size):
            tid = self._slot_ids[i]
            cursor = self._slot_cursors[i]
            traj = trajectories[tid]
            items.append(
                BatchItem(tid, cursor, traj.transitions[cursor], cursor == traj.length - 1)
            )
            cursor -= 1
            if cursor < 0:
                self._slot_ids[i] = -1
                completed.append(tid)
                self._selector.notify_complete(tid)
            else:
                self._slot_cursors[i] = cursor
        self._completed_last = tuple(completed)
        return items


class UniformTransitionSampler:
    """I.i.d. uniform draws (with replacement) over every stored transition."""

    def __init__(self, dataset: OfflineDataset) -> None:
        lengths = np.array([traj.length for traj in dataset.trajectories])
        self._cum = np.cumsum(lengths)
        self._starts = self._cum - lengths
        self._trajectories = dataset.trajectories
        self._total = int(self._cum[-1])

    @property
    def total(self) -> int:
        return self._total

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[BatchItem]:
        if batch_size == 0:
            return []
        flat = rng.integers(0, self._total, size=batch_size)
        tids = np.searchsorted(self._cum, flat, side="right")
        starts = self._starts
        trajectories = self._trajectories
        items = []
        for k in range(batch_size):
            j = int(tids[k])
            t = int(flat[k] - starts[j])
            traj = trajectories[j]
            items.append(BatchItem(j, t, traj.transitions[t], t == traj.length - 1))
        return items


def uniform_transition_sample(
    dataset: OfflineDataset, batch_size: int, rng: np.random.Generator
) -> list[BatchItem]:
    """One-shot form of :class:`UniformTransitionSampler` for casual use."""
    return UniformTransitionSampler(dataset).sample(batch_size, rng)


class SumTree:
    """Complete binary tree whose internal nodes hold the sum of their children.

    Leaves store non-negative sampling weights; prefix-sum descent gives
    O(log n) categorical draws and O(log n) single-leaf updates.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._nodes = np.zeros(2 * capacity - 1)

    @property
    def total(self) -> float:
        return float(self._nodes[0])

    def leaf_value(self, leaf: int) -> float:
        return float(self._nodes[self.capacity - 1 + leaf])

    def update(self, leaf: int, value: float) -> None:
        if value < 0:
            raise ValueError(f"leaf priorities must be non-negative, got {value}")
        idx = self.capacity - 1 + leaf
        nodes = self._nodes
        change = value - nodes[idx]
        nodes[idx] = value
        while idx:
            idx = (idx - 1) // 2
            nodes[idx] += change

    def find_prefix(self, prefix: float) -> int:
        """Return the leaf index owning the mass interval containing ``prefix``."""
        nodes = self._nodes
        size = len(nodes)
        idx = 0
        while True:
            left = 2 * idx + 1
            if left >= size:
                return idx - (self.capacity - 1)
            right = left + 1
            # The right guard only matters on exact float boundaries.
            if prefix < nodes[left] or nodes[right] == 0.0:
                idx = left
            else:
                prefix -= nodes[left]
                idx = right


def per_priority(td_error: float, epsilon: float) -> float:
    """Proportional replay priority: |TD error| plus a positive floor."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return abs(td_error) + epsilon


class PerTransitionSampler:
    """Prioritized transition sampling, P(j) = p_j^alpha / sum_k p_k^alpha.

    Every transition starts at priority 1.0 (max-priority convention) so each
    is visited before TD errors differentiate them; the learner writes new
    priorities back through the leaf indices returned by :meth:`sample`.
    """

    def __init__(
        self, dataset: OfflineDataset, alpha: float = 1.0, epsilon: float = 0.01
    ) -> None:
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        if epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.alpha = alpha
        self.epsilon = epsilon
        self._items = [
            BatchItem(tid, t, tr, t == dataset.trajectories[tid].length - 1)
            for tid, t, tr in dataset.iter_transitions()
        ]
        self.tree = SumTree(len(self._items))
        for leaf in range(len(self._items)):
            self.tree.update(leaf, 1.0)

    def __len__(self) -> int:
        return len(self._items)

    def sample(
        self, batch_size: int, rng: np.random.Generator
    ) -> tuple[list[BatchItem], np.ndarray]:
        """Draw a batch; returns (items, leaf indices for priority write-back)."""
        prefixes = rng.random(batch_size) * self.tree.total
        leaves = np.fromiter(
            (self.tree.find_prefix(p) for p in prefixes), dtype=np.int64, count=batch_size
        )
        return [self._items[leaf] for leaf in leaves], leaves

    def update_priorities(self, leaves: Sequence[int], td_errors: Sequence[float]) -> None:
        if len(leaves) != len(td_errors):
            raise ValueError("leaves and td_errors must have equal lengths")
        for leaf, td in zip(leaves, td_errors):
            self.tree.update(int(leaf), per_priority(td, self.epsilon) ** self.alpha)
