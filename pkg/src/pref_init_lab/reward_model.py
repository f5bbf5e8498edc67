"""Learned reward over (state, action) pairs, trained from pairwise preferences.

The model is a tanh-bounded MLP (or a mean over several such members).  It
supports the constant-target regression used to initialize it from
pretraining data, and cross-entropy training under the Bradley-Terry model.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid_env import Action, GridEnv, GridPos, MalformedQueryError, Segment
from .nn_core import AdamState, DenseNet, InitScheme, adam_step, backward, forward, init_weights

log = logging.getLogger(__name__)

HIDDEN = (64, 64)


@dataclass
class RewardNet:
    members: list[DenseNet]
    base_init: InitScheme
    optimizers: list[AdamState] = field(default_factory=list)

    @classmethod
    def create(
        cls,
        env: GridEnv,
        base_init: InitScheme | str,
        rng: np.random.Generator,
        ensemble_size: int = 1,
        hidden: Sequence[int] = HIDDEN,
        lr: float = 1e-3,
    ) -> "RewardNet":
        base_init = InitScheme.parse(base_init)
        dims = [env.feature_dim, *hidden, 1]
        members = [init_weights(base_init, dims, rng, output_activation="tanh") for _ in range(ensemble_size)]
        return cls(members, base_init, [AdamState.for_net(m, lr=lr) for m in members])

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Predicted rewards for a batch of encoded (state, action) rows."""
        out = np.zeros(len(features))
        for net in self.members:
            out += forward(net, features)[0][:, 0]
        return out / len(self.members)

    def reward_table(self, env: GridEnv) -> np.ndarray:
        """Predicted reward for every (flat state, action), shape ``(n*n, 4)``."""
        states = np.repeat(np.arange(env.n_states), 4)
        actions = np.tile(np.arange(4), env.n_states)
        return self.predict(env.encode_batch(states, actions)).reshape(env.n_states, 4)

    def copy(self) -> "RewardNet":
        return RewardNet(
            [m.copy() for m in self.members],
            self.base_init,
            [
                AdamState([a.copy() for a in s.m], [a.copy() for a in s.v], s.t, s.lr, s.beta1, s.beta2, s.eps)
                for s in self.optimizers
            ],
        )


@dataclass(frozen=True)
class PreferenceRecord:
    seg0: Segment
    seg1: Segment
    y: int  # 0 means seg0 preferred

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y}")
        if len(self.seg0) != len(self.seg1):
            raise MalformedQueryError("segments of a preference record must share one length")


@dataclass(frozen=True)
class Trajectory:
    """One episode: ``states`` has one more entry than ``actions`` (the final state)."""

    states: np.ndarray
    actions: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.size)

    def window(self, offset: int, length: int) -> Segment:
        return Segment(
            self.states[offset : offset + length],
            self.actions[offset : offset + length],
            self.states[offset + 1 : offset + length + 1],
        )

    def as_segment(self) -> Segment:
        return self.window(0, len(self))


class TrajectoryBuffer:
    """FIFO store of whole episodes."""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.trajectories: deque[Trajectory] = deque(maxlen=capacity)

    def add(self, traj: Trajectory) -> None:
        self.trajectories.append(traj)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i: int) -> Trajectory:
        return self.trajectories[i]

    def state_action_pairs(self, dedup: bool = True, all_actions: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """(state, action) pairs in the buffer.

        ``all_actions`` pairs every state where an action was taken with all
        four actions.  ``dedup`` keeps one copy of each pair (sorted); without
        it, pairs repeat once per visit.
        """
        nonempty = [t for t in self.trajectories if len(t)]
        if not nonempty:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        s = np.concatenate([t.states[:-1] for t in nonempty])
        a = np.concatenate([t.actions for t in nonempty])
        if all_actions:
            s = np.unique(s) if dedup else s
            return np.repeat(s, 4), np.tile(np.arange(4), s.size)
        if dedup:
            pairs = np.unique(s * 4 + a)
            return pairs // 4, pairs % 4
        return s, a

    def visited_cells(self) -> np.ndarray:
        """Flat indices of states in which at least one action was taken."""
        return np.unique(self.state_action_pairs()[0])


def predict_reward(model: RewardNet, env: GridEnv, s: GridPos, a: Action) -> float:
    return float(model.predict(env.encode(s, a)[None, :])[0])


def segment_return(model: RewardNet, env: GridEnv, seg: Segment) -> float:
    return float(model.predict(env.encode_batch(seg.states, seg.actions)).sum())


def bradley_terry(g0: float | np.ndarray, g1: float | np.ndarray) -> float | np.ndarray:
    """exp(g0) / (exp(g0) + exp(g1)) without overflow."""
    d = np.asarray(g1, dtype=np.float64) - np.asarray(g0, dtype=np.float64)
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def preference_prob(model: RewardNet, env: GridEnv, seg0: Segment, seg1: Segment) -> float:
    if len(seg0) != len(seg1):
        raise MalformedQueryError(f"segment lengths differ: {len(seg0)} vs {len(seg1)}")
    return bradley_terry(segment_return(model, env, seg0), segment_return(model, env, seg1))


def _stack_records(env: GridEnv, batch: Sequence[PreferenceRecord]):
    if not batch:
        raise ValueError("empty preference batch")
    length = len(batch[0].seg0)
    if any(len(r.seg0) != length for r in batch):
        raise MalformedQueryError("all records in a batch must share one segment length")
    states = np.stack([np.stack([r.seg0.states, r.seg1.states]) for r in batch])
    actions = np.stack([np.stack([r.seg0.actions, r.seg1.actions]) for r in batch])
    y = np.array([r.y for r in batch])
    return env.encode_batch(states, actions), y, states.shape


def _ce_member(net: DenseNet, x: np.ndarray, y: np.ndarray, shape) -> tuple[float, object, np.ndarray]:
    """CE loss of one member plus the cache and output gradient needed for backward."""
    r, cache = forward(net, x)
    returns = r[:, 0].reshape(shape).sum(axis=2)  # (B, 2)
    m = returns.max(axis=1, keepdims=True)
    logz = m[:, 0] + np.log(np.exp(returns - m).sum(axis=1))
    b = len(y)
    loss = float(np.mean(logz - returns[np.arange(b), y]))
    p = np.exp(returns - logz[:, None])
    p[np.arange(b), y] -= 1.0
    grad_returns = p / b
    grad_r = np.repeat(grad_returns[:, :, None], shape[2], axis=2).reshape(-1, 1)
    return loss, cache, grad_r


def ce_loss(model: RewardNet, env: GridEnv, batch: Sequence[PreferenceRecord]) -> float:
    """Mean cross-entropy between Bradley-Terry probabilities and the labels."""
    x, y, shape = _stack_records(env, batch)
    returns = model.predict(x).reshape(shape).sum(axis=2)
    m = returns.max(axis=1, keepdims=True)
    logz = m[:, 0] + np.log(np.exp(returns - m).sum(axis=1))
    return float(np.mean(logz - returns[np.arange(len(y)), y]))


def ce_loss_and_grads(net: DenseNet, env: GridEnv, batch: Sequence[PreferenceRecord]):
    """CE loss of a single member network and its parameter gradients."""
    x, y, shape = _stack_records(env, batch)
    loss, cache, grad_r = _ce_member(net, x, y, shape)
    return loss, backward(net, cache, grad_r)


def init_fit_loss(net: DenseNet, x: np.ndarray, target: float):
    """Mean squared deviation of predictions from ``target`` and its gradients."""
    r, cache = forward(net, x)
    err = r[:, 0] - target
    loss = float(np.mean(err**2))
    return loss, cache, (2.0 * err / len(err))[:, None]


def pretrain_init_fit(
    model: RewardNet,
    env: GridEnv,
    buffer: TrajectoryBuffer,
    epsilon_init: float,
    tol: float = 1e-4,
    max_epochs: int = 2000,
    lr: float = 1e-3,
    dedup: bool = True,
    all_actions: bool = True,
) -> list[float]:
    """Regress predicted rewards on the buffer's (state, action) pairs to ``epsilon_init``.

    With ``all_actions`` every action at each visited state is a regression
    target, not only the actions actually taken there.

    Full-batch Adam per member until the mean squared error drops below
    ``tol`` or ``max_epochs`` is reached.  Uses a fresh optimizer so the
    preference optimizer starts clean.  Returns the loss before each epoch
    (for the last member when several are fitted).
    """
    if not -1.0 < epsilon_init < 1.0:
        raise ValueError(f"epsilon_init={epsilon_init} is outside the reward range (-1, 1)")
    if len(buffer) == 0:
        raise ValueError("pretraining buffer is empty")
    s, a = buffer.state_action_pairs(dedup=dedup, all_actions=all_actions)
    if s.size == 0:
        raise ValueError("pretraining buffer holds no transitions")
    x = env.encode_batch(s, a)
    trace: list[float] = []
    for net in model.members:
        adam = AdamState.for_net(net, lr=lr)
        trace = []
        for _ in range(max_epochs):
            loss, cache, grad = init_fit_loss(net, x, epsilon_init)
            trace.append(loss)
            if loss < tol:
                break
            adam_step(net, backward(net, cache, grad), adam)
        else:
            trace.append(init_fit_loss(net, x, epsilon_init)[0])
        log.debug("init fit: %d epochs, final loss %.3g", len(trace), trace[-1])
    return trace


def update_on_preferences(
    model: RewardNet,
    env: GridEnv,
    dataset: Sequence[PreferenceRecord],
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> list[float]:
    """Mini-batch Adam on the CE loss; returns the mean batch loss of each epoch."""
    if not dataset:
        raise ValueError("preference dataset is empty")
    x_all, y_all, shape = _stack_records(env, dataset)
    n, length = shape[0], shape[2]
    x_all = x_all.reshape(n, 2 * length, -1)
    trace = []
    for _ in range(epochs):
        losses = np.zeros(len(model.members))
        for k, (net, adam) in enumerate(zip(model.members, model.optimizers)):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                x = x_all[idx].reshape(-1, x_all.shape[2])
                loss, cache, grad_r = _ce_member(net, x, y_all[idx], (len(idx), 2, length))
                adam_step(net, backward(net, cache, grad_r), adam)
                total += loss * len(idx)
            losses[k] = total / n
        trace.append(float(losses.mean()))
    return trace


def reward_heatmap(model: RewardNet, env: GridEnv) -> np.ndarray:
    """Per-cell maximum predicted reward over the four actions, shape ``(n, n)``."""
    return model.reward_table(env).max(axis=1).reshape(env.n, env.n)

