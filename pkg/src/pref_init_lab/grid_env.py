"""Reward-free gridworld, its ground-truth reward and the synthetic preference oracle.

Coordinates are (row, col) with row 0 at the top and rows increasing downward.
The agent starts at (0, 0); the goal is the bottom-right cell (n-1, n-1).
Moves off the grid leave the agent in place.  Reaching the goal ends the
episode; rollouts are also truncated at ``max_steps`` (default ``4 * n``).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


N_ACTIONS = len(Action)

# (d_row, d_col) indexed by action
_MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]], dtype=np.int64)


class GridPos(NamedTuple):
    row: int
    col: int


class Preference(IntEnum):
    PREFER0 = 0
    PREFER1 = 1
    TIE = 2


class MalformedQueryError(ValueError):
    """Raised when two segments of different lengths are compared."""


@dataclass(frozen=True)
class GridEnv:
    n: int
    max_steps: int | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"grid size must be >= 2, got {self.n}")
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", 4 * self.n)
        if self.max_steps < 2 * (self.n - 1):
            raise ValueError(
                f"max_steps={self.max_steps} cannot reach the goal (needs >= {2 * (self.n - 1)})"
            )

    @property
    def start(self) -> GridPos:
        return GridPos(0, 0)

    @property
    def goal(self) -> GridPos:
        return GridPos(self.n - 1, self.n - 1)

    @property
    def n_states(self) -> int:
        return self.n * self.n

    @property
    def feature_dim(self) -> int:
        return self.n_states + N_ACTIONS

    def in_bounds(self, s: GridPos) -> bool:
        return 0 <= s[0] < self.n and 0 <= s[1] < self.n

    def index(self, s: GridPos) -> int:
        return int(s[0]) * self.n + int(s[1])

    def pos(self, idx: int) -> GridPos:
        return GridPos(*divmod(int(idx), self.n))

    def reset(self) -> GridPos:
        return self.start

    def step(self, s: GridPos, a: Action) -> tuple[GridPos, bool]:
        if not self.in_bounds(s):
            raise ValueError(f"state {tuple(s)} outside {self.n}x{self.n} grid")
        dr, dc = _MOVES[int(a)]
        nxt = GridPos(min(max(s[0] + dr, 0), self.n - 1), min(max(s[1] + dc, 0), self.n - 1))
        return GridPos(int(nxt.row), int(nxt.col)), nxt == self.goal

    def step_index(self, s: int, a: int) -> tuple[int, bool]:
        """``step`` on flat state indices; used in the hot rollout loops."""
        r, c = divmod(s, self.n)
        dr, dc = _MOVES[a]
        r = min(max(r + dr, 0), self.n - 1)
        c = min(max(c + dc, 0), self.n - 1)
        nxt = int(r * self.n + c)
        return nxt, nxt == self.n_states - 1

    def oracle_reward(self, s: GridPos) -> float:
        """Negative Euclidean distance from ``s`` to the goal."""
        if not self.in_bounds(s):
            raise ValueError(f"state {tuple(s)} outside {self.n}x{self.n} grid")
        return -float(np.hypot(s[0] - (self.n - 1), s[1] - (self.n - 1)))

    def oracle_reward_table(self) -> np.ndarray:
        """Oracle reward of every flat state index, shape ``(n*n,)``."""
        rows, cols = np.divmod(np.arange(self.n_states), self.n)
        return -np.hypot(rows - (self.n - 1), cols - (self.n - 1))

    def encode(self, s: GridPos, a: Action) -> np.ndarray:
        x = np.zeros(self.feature_dim)
        x[self.index(s)] = 1.0
        x[self.n_states + int(a)] = 1.0
        return x

    def encode_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Rows of ``encode`` for flat state indices and integer actions."""
        states = np.asarray(states, dtype=np.int64).ravel()
        actions = np.asarray(actions, dtype=np.int64).ravel()
        x = np.zeros((states.size, self.feature_dim))
        rows = np.arange(states.size)
        x[rows, states] = 1.0
        x[rows, self.n_states + actions] = 1.0
        return x

    def state_onehot(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64).ravel()
        x = np.zeros((states.size, self.n_states))
        x[np.arange(states.size), states] = 1.0
        return x


@dataclass(frozen=True)
class Segment:
    """A window of consecutive steps: ``actions[t]`` taken in ``states[t]`` led to ``next_states[t]``.

    States are flat indices (``row * n + col``).
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        for name in ("states", "actions", "next_states"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.states.shape == self.actions.shape == self.next_states.shape):
            raise ValueError("segment arrays must share one length")
        if self.states.ndim != 1 or self.states.size < 1:
            raise ValueError("segment must contain at least one step")

    def __len__(self) -> int:
        return int(self.states.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Segment):
            return NotImplemented
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.next_states, other.next_states)
        )

    __hash__ = None

    @classmethod
    def from_steps(cls, env: GridEnv, steps: Sequence[tuple[GridPos, Action]]) -> "Segment":
        """Build a segment from (state, action) pairs; successors come from the dynamics."""
        states, actions, nexts = [], [], []
        for s, a in steps:
            nxt, _ = env.step(GridPos(*s), Action(a))
            states.append(env.index(s))
            actions.append(int(a))
            nexts.append(env.index(nxt))
        return cls(np.array(states), np.array(actions), np.array(nexts))

    def steps(self, env: GridEnv) -> list[tuple[GridPos, Action]]:
        return [(env.pos(s), Action(int(a))) for s, a in zip(self.states, self.actions)]

    def concat(self, other: "Segment") -> "Segment":
        return Segment(
            np.concatenate([self.states, other.states]),
            np.concatenate([self.actions, other.actions]),
            np.concatenate([self.next_states, other.next_states]),
        )

    def is_consistent(self, env: GridEnv) -> bool:
        for t in range(len(self)):
            nxt, _ = env.step_index(int(self.states[t]), int(self.actions[t]))
            if nxt != self.next_states[t]:
                return False
            if t + 1 < len(self) and self.states[t + 1] != nxt:
                return False
        return True


def oracle_return(env: GridEnv, seg: Segment) -> float:
    """Sum of oracle rewards over the successor state of every step."""
    return float(env.oracle_reward_table()[seg.next_states].sum())


def oracle_label(env: GridEnv, seg0: Segment, seg1: Segment) -> Preference:
    if len(seg0) != len(seg1):
        raise MalformedQueryError(f"segment lengths differ: {len(seg0)} vs {len(seg1)}")
    g0 = oracle_return(env, seg0)
    g1 = oracle_return(env, seg1)
    if g0 > g1:
        return Preference.PREFER0
    if g0 < g1:
        return Preference.PREFER1
    return Preference.TIE
