"""Hierarchical prioritized experience replay.

Transitions carry two priorities: the option-level one is the absolute
option TD error, the action-level one is the action TD error minus the
option priority, shifted per update batch so every stored priority stays
strictly positive.  Proportional sampling runs on sum-trees; a uniform
mode and a single-priority mode exist for ablations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .env import StateVector
from .rewards import OptionId


class Level(enum.Enum):
    OPTION = "option"
    ACTION = "action"


class ReplayMode(enum.Enum):
    DUAL = "dual"        # full hierarchical PER
    SINGLE = "single"    # one shared priority (the option TD error)
    UNIFORM = "uniform"  # plain uniform replay, all weights 1


@dataclass(frozen=True)
class Transition:
    state: StateVector
    option: OptionId
    action: int
    r_option: float
    r_action: float
    next_state: StateVector
    terminal: bool


class SumTree:
    """Array-backed binary sum tree over `capacity` leaves."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1)

    def __getitem__(self, idx: int) -> float:
        return float(self.nodes[idx + self.capacity - 1])

    def set(self, idx: int, value: float) -> None:
        node = idx + self.capacity - 1
        delta = value - self.nodes[node]
        while True:
            self.nodes[node] += delta
            if node == 0:
                break
            node = (node - 1) // 2

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def find_prefix(self, mass: float) -> int:
        """Leaf index i such that the cumulative sum up to i covers `mass`."""
        node = 0
        while node < self.capacity - 1:
            left = 2 * node + 1
            if mass <= self.nodes[left]:
                node = left
            else:
                mass -= self.nodes[left]
                node = left + 1
        return node - (self.capacity - 1)

    def leaves(self, n: int) -> np.ndarray:
        return self.nodes[self.capacity - 1:self.capacity - 1 + n].copy()


class PrioritizedStore:
    """Bounded ring of transitions with per-level proportional sampling."""

    def __init__(self, capacity: int, alpha: float = 0.6, beta: float = 0.4,
                 epsilon_priority: float = 1e-3,
                 mode: ReplayMode = ReplayMode.DUAL, seed: int = 0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if alpha < 0 or not 0.0 <= beta <= 1.0 or epsilon_priority <= 0:
            raise ValueError("bad replay hyperparameters")
        self.capacity = capacity
        self.alpha = alpha
        self.beta = beta
        self.epsilon_priority = epsilon_priority
        self.mode = mode
        self._rng = np.random.default_rng(seed)

        self._data: list[Transition | None] = [None] * capacity
        self._write = 0
        self.size = 0
        # Raw priorities and their ^alpha sum-trees, per level.
        self._raw = {Level.OPTION: np.zeros(capacity),
                     Level.ACTION: np.zeros(capacity)}
        self._tree = {Level.OPTION: SumTree(capacity),
                      Level.ACTION: SumTree(capacity)}
        self._max_raw = {Level.OPTION: 1.0, Level.ACTION: 1.0}

    def __len__(self) -> int:
        return self.size

    # -- writes -------------------------------------------------------

    def push(self, t: Transition) -> None:
        idx = self._write
        self._data[idx] = t
        for level in (Level.OPTION, Level.ACTION):
            self._set_priority(idx, level, self._max_raw[level])
        self._write = (self._write + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _set_priority(self, idx: int, level: Level, raw: float) -> None:
        if not np.isfinite(raw):
            raise ValueError("priority must be finite")
        raw = max(raw, self.epsilon_priority)
        self._raw[level][idx] = raw
        self._tree[level].set(idx, raw ** self.alpha)
        if raw > self._max_raw[level]:
            self._max_raw[level] = raw

    def update_priorities(self, indices: list[int], td_errors_o: list[float],
                          td_errors_a: list[float]) -> None:
        """Option priority = |option TD error|; raw action priority =
        |action TD error| - option priority, then shifted by the batch
        minimum (plus epsilon) so all stored values are positive."""
        if not (len(indices) == len(td_errors_o) == len(td_errors_a)):
            raise ValueError("index/error lists must have equal length")
        for i in indices:
            if not 0 <= i < self.size:
                raise IndexError(f"transition index {i} out of range")
        p_o = np.abs(np.asarray(td_errors_o, dtype=float))
        if self.mode is ReplayMode.SINGLE:
            p_a = p_o.copy()
        else:
            raw_a = np.abs(np.asarray(td_errors_a, dtype=float)) - p_o
            p_a = raw_a - raw_a.min() + self.epsilon_priority
        for idx, po, pa in zip(indices, p_o, p_a):
            self._set_priority(idx, Level.OPTION, float(po))
            self._set_priority(idx, Level.ACTION, float(pa))

    # -- sampling -----------------------------------------------------

    def sample(self, k: int, level: Level) -> list[tuple[int, Transition, float]]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty store")
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.mode is ReplayMode.UNIFORM:
            idx = self._rng.integers(0, self.size, size=k)
            return [(int(i), self._data[int(i)], 1.0) for i in idx]
        if self.mode is ReplayMode.SINGLE:
            level = Level.OPTION

        tree = self._tree[level]
        total = tree.total
        draws = self._rng.uniform(0.0, total, size=k)
        # Prefix search can land on an empty leaf only on an exact
        # boundary; clamp into the populated range.
        indices = [min(tree.find_prefix(m), self.size - 1) for m in draws]
        probs = np.array([tree[i] / total for i in indices])
        weights = (self.size * probs) ** (-self.beta)
        weights = weights / weights.max()
        return [(i, self._data[i], float(w))
                for i, w in zip(indices, weights)]

    # -- diagnostics --------------------------------------------------

    def priorities(self, level: Level) -> np.ndarray:
        return self._raw[level][:self.size].copy()

    def stats_csv(self) -> str:
        """Small CSV dump of buffer size and per-level priority stats."""
        lines = ["level,size,min,max,mean"]
        for level in (Level.OPTION, Level.ACTION):
            p = self.priorities(level)
            if len(p) == 0:
                lines.append(f"{level.value},0,0,0,0")
            else:
                lines.append(f"{level.value},{self.size},{p.min():.6g},"
                             f"{p.max():.6g},{p.mean():.6g}")
        return "\n".join(lines) + "\n"
