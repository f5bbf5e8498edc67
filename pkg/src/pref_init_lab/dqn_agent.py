"""DQN trained on a learned reward: Q-network, replay with relabelable rewards, target sync."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .grid_env import Action, GridEnv, GridPos, oracle_return, Segment
from .nn_core import AdamState, DenseNet, adam_step, backward, forward, init_weights, InitScheme

HIDDEN = (64, 64)


def make_qnet(env: GridEnv, rng: np.random.Generator, scheme: InitScheme | str = InitScheme.KAIMING_UNIFORM) -> DenseNet:
    return init_weights(scheme, [env.n_states, *HIDDEN, 4], rng)


class RewardSource(Protocol):
    def reward_table(self, env: GridEnv) -> np.ndarray:
        """Reward for every (flat state, action), shape ``(n*n, 4)``."""


class OracleReward:
    """Ground-truth reward of the successor state; only used for the sanity mode."""

    def reward_table(self, env: GridEnv) -> np.ndarray:
        table = np.empty((env.n_states, 4))
        oracle = env.oracle_reward_table()
        for s in range(env.n_states):
            for a in range(4):
                table[s, a] = oracle[env.step_index(s, a)[0]]
        return table


@dataclass(frozen=True)
class ReplayTransition:
    s: GridPos
    a: Action
    s_next: GridPos
    terminal: bool
    r_hat: float


@dataclass
class ReplayBatch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    r_hat: np.ndarray

    @classmethod
    def from_transitions(cls, env: GridEnv, transitions: Sequence[ReplayTransition]) -> "ReplayBatch":
        return cls(
            np.array([env.index(t.s) for t in transitions]),
            np.array([int(t.a) for t in transitions]),
            np.array([env.index(t.s_next) for t in transitions]),
            np.array([bool(t.terminal) for t in transitions]),
            np.array([float(t.r_hat) for t in transitions]),
        )

    def __len__(self) -> int:
        return int(self.s.size)


class ReplayBuffer:
    """Ring buffer of transitions stored as flat-index arrays."""

    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self.s = np.zeros(self.capacity, dtype=np.int64)
        self.a = np.zeros(self.capacity, dtype=np.int64)
        self.s_next = np.zeros(self.capacity, dtype=np.int64)
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.r_hat = np.zeros(self.capacity)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s: int, a: int, s_next: int, terminal: bool, r_hat: float) -> None:
        i = self._head
        self.s[i], self.a[i], self.s_next[i], self.terminal[i], self.r_hat[i] = s, a, s_next, terminal, r_hat
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _ordered(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self._head) % self.capacity

    def sample(self, rng: np.random.Generator, batch_size: int) -> ReplayBatch:
        idx = rng.integers(0, self.size, size=batch_size)
        return ReplayBatch(self.s[idx], self.a[idx], self.s_next[idx], self.terminal[idx], self.r_hat[idx])

    def transitions(self, env: GridEnv) -> list[ReplayTransition]:
        """Stored transitions, oldest first."""
        return [
            ReplayTransition(env.pos(self.s[i]), Action(int(self.a[i])), env.pos(self.s_next[i]), bool(self.terminal[i]), float(self.r_hat[i]))
            for i in self._ordered()
        ]


def select_action(q: DenseNet, env: GridEnv, s: GridPos | int, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return Action(int(rng.integers(4)))
    idx = s if isinstance(s, (int, np.integer)) else env.index(s)
    x = np.zeros(env.n_states)
    x[idx] = 1.0
    return Action(int(np.argmax(forward(q, x)[0])))


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 15_000

    def __post_init__(self):
        if not 0.0 <= self.end <= self.start <= 1.0:
            raise ValueError("need 0 <= end <= start <= 1")

    def __call__(self, step: int) -> float:
        if self.decay_steps <= 0 or step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * step / self.decay_steps


def td_update(
    q: DenseNet,
    target: DenseNet,
    batch: ReplayBatch,
    gamma: float,
    adam: AdamState,
    env: GridEnv,
) -> float:
    """One Adam step on the mean squared TD error; returns the loss before the step."""
    if len(batch) == 0:
        raise ValueError("empty TD batch")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    b = len(batch)
    q_next = forward(target, env.state_onehot(batch.s_next))[0]
    y = batch.r_hat + gamma * (~batch.terminal) * q_next.max(axis=1)
    out, cache = forward(q, env.state_onehot(batch.s))
    rows = np.arange(b)
    err = out[rows, batch.a] - y
    loss = float(np.mean(err**2))
    grad = np.zeros_like(out)
    grad[rows, batch.a] = 2.0 * err / b
    adam_step(q, backward(q, cache, grad), adam)
    return loss


def relabel_buffer(replay: ReplayBuffer, model: RewardSource, env: GridEnv) -> ReplayBuffer:
    """Recompute every stored reward from the current reward model, in place."""
    table = model.reward_table(env)
    n = replay.size
    replay.r_hat[:n] = table[replay.s[:n], replay.a[:n]]
    return replay


def sync_target(q: DenseNet, target: DenseNet) -> DenseNet:
    target.load_from(q)
    return target


def greedy_rollout(q: DenseNet, env: GridEnv) -> Segment | None:
    """Greedy episode from the start state; ``None`` if it takes no steps."""
    qs = forward(q, np.eye(env.n_states))[0]
    greedy = np.argmax(qs, axis=1)
    s = env.index(env.reset())
    states, actions = [s], []
    for _ in range(env.max_steps):
        a = int(greedy[s])
        s, done = env.step_index(s, a)
        actions.append(a)
        states.append(s)
        if done:
            break
    if not actions:
        return None
    return Segment(np.array(states[:-1]), np.array(actions), np.array(states[1:]))


def evaluate_policy(q: DenseNet, env: GridEnv, episodes: int = 5) -> float:
    """Mean ground-truth return of greedy episodes from the start state."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    returns = []
    for _ in range(episodes):
        seg = greedy_rollout(q, env)
        returns.append(0.0 if seg is None else oracle_return(env, seg))
    return float(np.mean(returns))
