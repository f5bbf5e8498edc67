"""Preference-based RL run: pretraining collection, optional constant-reward init, query sessions, DQN.

Random streams are derived from the run seed in a fixed order::

    SeedSequence(seed).spawn(6) -> reward weights, Q weights, environment
                                   (pretraining + exploration), query sampling,
                                   reward-update shuffling, replay sampling

so arms that share a seed also share pretraining data and query draws up to
the point where their policies diverge.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .dqn_agent import (
    EpsilonSchedule,
    OracleReward,
    ReplayBuffer,
    evaluate_policy,
    make_qnet,
    relabel_buffer,
    select_action,
    sync_target,
    td_update,
)
from .grid_env import GridEnv, Preference, Segment, oracle_label
from .nn_core import AdamState, DenseNet, InitScheme
from .reward_model import (
    PreferenceRecord,
    RewardNet,
    Trajectory,
    TrajectoryBuffer,
    pretrain_init_fit,
    reward_heatmap,
    update_on_preferences,
)

log = logging.getLogger(__name__)

TIE_POLICIES = ("discard-and-resample",)
REWARD_MODES = ("learned", "oracle")


@dataclass
class LoopConfig:
    grid_size: int = 7
    max_steps: int | None = None  # None -> 4 * grid_size
    init_scheme: InitScheme = InitScheme.DATA_DRIVEN
    base_init: InitScheme = InitScheme.ORTHONORMAL  # weights under the data-driven fit
    pretrain_episodes: int = 15
    total_env_steps: int | None = None  # None -> 50k for n <= 7, else 120k
    session_interval_steps: int = 2000
    queries_per_session: int = 20
    segment_length: int = 10
    epsilon_init: float = 0.4
    tie_policy: str = "discard-and-resample"
    max_resample_attempts: int = 100
    # constant-reward fit
    init_fit_tol: float = 1e-4
    init_fit_max_epochs: int = 2000
    init_fit_lr: float = 1e-3
    init_fit_dedup: bool = True
    init_fit_all_actions: bool = True
    # reward model
    ensemble_size: int = 1
    reward_lr: float = 1e-3
    reward_epochs: int = 50
    reward_batch_size: int = 32
    trajectory_capacity: int = 1000
    # DQN
    gamma: float = 0.99
    q_lr: float = 1e-3
    dqn_batch_size: int = 64
    replay_capacity: int = 50_000
    target_sync_interval: int = 100
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.3
    # evaluation
    eval_interval_steps: int = 1000
    eval_episodes: int = 5
    reward_mode: str = "learned"

    def __post_init__(self):
        self.init_scheme = InitScheme.parse(self.init_scheme)
        self.base_init = InitScheme.parse(self.base_init)
        self.validate()

    @property
    def env_steps(self) -> int:
        if self.total_env_steps is not None:
            return self.total_env_steps
        return 50_000 if self.grid_size <= 7 else 120_000

    def make_env(self) -> GridEnv:
        return GridEnv(self.grid_size, self.max_steps)

    def validate(self) -> None:
        def need(ok: bool, key: str, msg: str):
            if not ok:
                raise ValueError(f"{key}: {msg}")

        need(self.grid_size >= 2, "grid_size", "must be >= 2")
        need(self.base_init is not InitScheme.DATA_DRIVEN, "base_init", "must be a weight scheme")
        need(self.pretrain_episodes >= 1, "pretrain_episodes", "must be >= 1")
        need(self.total_env_steps is None or self.total_env_steps >= 0, "total_env_steps", "must be >= 0")
        need(self.session_interval_steps >= 1, "session_interval_steps", "must be >= 1")
        need(self.queries_per_session >= 1, "queries_per_session", "must be >= 1")
        need(self.segment_length >= 1, "segment_length", "must be >= 1")
        max_steps = self.max_steps if self.max_steps is not None else 4 * self.grid_size
        need(max_steps >= 2 * (self.grid_size - 1), "max_steps", "goal unreachable")
        need(self.segment_length <= max_steps, "segment_length", f"must be <= max_steps ({max_steps})")
        need(-1.0 < self.epsilon_init < 1.0, "epsilon_init", "must lie inside the reward range (-1, 1)")
        need(self.tie_policy in TIE_POLICIES, "tie_policy", f"must be one of {TIE_POLICIES}")
        need(self.max_resample_attempts >= 0, "max_resample_attempts", "must be >= 0")
        need(self.ensemble_size >= 1, "ensemble_size", "must be >= 1")
        need(0.0 <= self.gamma < 1.0, "gamma", "must be in [0, 1)")
        need(0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0, "epsilon_start", "need 0 <= end <= start <= 1")
        need(0.0 <= self.epsilon_decay_fraction <= 1.0, "epsilon_decay_fraction", "must be in [0, 1]")
        need(self.eval_interval_steps >= 1, "eval_interval_steps", "must be >= 1")
        need(self.eval_episodes >= 1, "eval_episodes", "must be >= 1")
        need(self.reward_mode in REWARD_MODES, "reward_mode", f"must be one of {REWARD_MODES}")
        for key in ("dqn_batch_size", "replay_capacity", "target_sync_interval", "reward_batch_size", "trajectory_capacity"):
            need(getattr(self, key) >= 1, key, "must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["init_scheme"] = self.init_scheme.value
        d["base_init"] = self.base_init.value
        return d


@dataclass(eq=False)
class RunMetrics:
    arm: str
    seed: int
    grid_size: int
    eval_steps: list[int] = field(default_factory=list)
    eval_returns: list[float] = field(default_factory=list)
    initial_heatmap: np.ndarray | None = None
    final_heatmap: np.ndarray | None = None
    oracle_label_count: int = 0  # preference labels delivered
    oracle_invocations: int = 0  # segment returns computed by the oracle, plus eval episodes
    resample_attempts: int = 0
    init_fit_calls: int = 0
    init_fit_epochs: int = 0
    valid: bool = True
    error: str | None = None
    wall_clock_seconds: float = 0.0
    # not serialized
    reward_model: RewardNet | None = None
    q_network: DenseNet | None = None
    pretrain_buffer: TrajectoryBuffer | None = None  # snapshot before main-loop episodes are appended
    preferences: list[PreferenceRecord] = field(default_factory=list)
    visited_cells: np.ndarray | None = None

    @property
    def final_return(self) -> float:
        return self.eval_returns[-1] if self.eval_returns else float("nan")

    def to_dict(self, timing: bool = False) -> dict[str, Any]:
        d = {
            "arm": self.arm,
            "seed": self.seed,
            "grid_size": self.grid_size,
            "eval_steps": list(self.eval_steps),
            "eval_returns": list(self.eval_returns),
            "initial_heatmap": None if self.initial_heatmap is None else self.initial_heatmap.tolist(),
            "final_heatmap": None if self.final_heatmap is None else self.final_heatmap.tolist(),
            "oracle_label_count": self.oracle_label_count,
            "oracle_invocations": self.oracle_invocations,
            "resample_attempts": self.resample_attempts,
            "init_fit_calls": self.init_fit_calls,
            "init_fit_epochs": self.init_fit_epochs,
            "valid": self.valid,
            "error": self.error,
        }
        if timing:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunMetrics):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass
class OracleLedger:
    labels: int = 0
    invocations: int = 0
    resamples: int = 0


def rollout_random(env: GridEnv, rng: np.random.Generator) -> Trajectory:
    s = env.index(env.reset())
    states, actions = [s], []
    for _ in range(env.max_steps):
        a = int(rng.integers(4))
        s, done = env.step_index(s, a)
        actions.append(a)
        states.append(s)
        if done:
            break
    return Trajectory(np.array(states), np.array(actions))


def pretrain_collect(env: GridEnv, episodes: int, rng: np.random.Generator, capacity: int = 1000) -> TrajectoryBuffer:
    """Uniform-random episodes from the start state; nothing is learned."""
    if episodes < 1:
        raise ValueError("need at least one pretraining episode")
    buffer = TrajectoryBuffer(capacity)
    for _ in range(episodes):
        buffer.add(rollout_random(env, rng))
    return buffer


def sample_query_pairs(
    buffer: TrajectoryBuffer, count: int, length: int, rng: np.random.Generator
) -> list[tuple[Segment, Segment]]:
    if count <= 0:
        return []
    eligible = [t for t in buffer if len(t) >= length]
    if not eligible:
        raise ValueError(f"no stored trajectory has {length} steps; use a smaller segment length")
    pairs = []
    for _ in range(count):
        pair = []
        for _ in range(2):
            traj = eligible[int(rng.integers(len(eligible)))]
            offset = int(rng.integers(len(traj) - length + 1))
            pair.append(traj.window(offset, length))
        pairs.append((pair[0], pair[1]))
    return pairs


def label_queries(
    env: GridEnv,
    pairs: list[tuple[Segment, Segment]],
    tie_policy: str,
    buffer: TrajectoryBuffer,
    rng: np.random.Generator,
    max_resample_attempts: int = 100,
    ledger: OracleLedger | None = None,
) -> list[PreferenceRecord]:
    """Oracle labels for each pair; tied pairs are replaced by fresh draws from ``buffer``."""
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie policy {tie_policy!r}")
    ledger = ledger if ledger is not None else OracleLedger()
    records = []
    for seg0, seg1 in pairs:
        attempts = 0
        while True:
            label = oracle_label(env, seg0, seg1)
            ledger.invocations += 2
            if label is not Preference.TIE:
                records.append(PreferenceRecord(seg0, seg1, int(label)))
                ledger.labels += 1
                break
            if attempts >= max_resample_attempts:  # the final tied call is counted in invocations only
                log.info("query slot left empty after %d resamples", attempts)
                break
            attempts += 1
            ledger.resamples += 1
            seg0, seg1 = sample_query_pairs(buffer, 1, len(seg0), rng)[0]
    return records


def run_experiment(config: LoopConfig, seed: int) -> RunMetrics:
    """One full run; failures come back as a partial record with ``valid=False``."""
    metrics = RunMetrics(arm=config.init_scheme.value, seed=int(seed), grid_size=config.grid_size)
    t0 = time.perf_counter()
    try:
        _run(config, int(seed), metrics)
    except Exception as exc:  # abort this run only
        log.exception("run %s seed %d failed", metrics.arm, seed)
        metrics.valid = False
        metrics.error = f"{type(exc).__name__}: {exc}"
    metrics.wall_clock_seconds = time.perf_counter() - t0
    return metrics


def _run(cfg: LoopConfig, seed: int, metrics: RunMetrics) -> None:
    ledger = OracleLedger()
    try:
        _run_body(cfg, seed, metrics, ledger)
    finally:  # counts stay honest for partial runs
        metrics.oracle_label_count = ledger.labels
        metrics.oracle_invocations = ledger.invocations
        metrics.resample_attempts = ledger.resamples


def _run_body(cfg: LoopConfig, seed: int, metrics: RunMetrics, ledger: OracleLedger) -> None:
    env = cfg.make_env()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]
    reward_rng, q_rng, env_rng, query_rng, update_rng, replay_rng = streams

    base = cfg.base_init if cfg.init_scheme is InitScheme.DATA_DRIVEN else cfg.init_scheme
    model = RewardNet.create(env, base, reward_rng, cfg.ensemble_size, lr=cfg.reward_lr)
    metrics.reward_model = model
    q = make_qnet(env, q_rng)
    metrics.q_network = q
    target = q.copy()
    adam = AdamState.for_net(q, lr=cfg.q_lr)

    buffer = pretrain_collect(env, cfg.pretrain_episodes, env_rng, cfg.trajectory_capacity)
    metrics.visited_cells = buffer.visited_cells()
    metrics.pretrain_buffer = TrajectoryBuffer(buffer.capacity)
    for traj in buffer:
        metrics.pretrain_buffer.add(traj)
    if cfg.init_scheme is InitScheme.DATA_DRIVEN:
        if metrics.init_fit_calls:
            raise RuntimeError("constant-reward fit already applied")
        trace = pretrain_init_fit(
            model, env, buffer, cfg.epsilon_init,
            tol=cfg.init_fit_tol, max_epochs=cfg.init_fit_max_epochs,
            lr=cfg.init_fit_lr, dedup=cfg.init_fit_dedup, all_actions=cfg.init_fit_all_actions,
        )
        metrics.init_fit_calls += 1
        metrics.init_fit_epochs = len(trace) - 1
    metrics.initial_heatmap = reward_heatmap(model, env)

    learned = cfg.reward_mode == "learned"
    table = model.reward_table(env) if learned else OracleReward().reward_table(env)
    replay = ReplayBuffer(cfg.replay_capacity)
    schedule = EpsilonSchedule(cfg.epsilon_start, cfg.epsilon_end, int(cfg.epsilon_decay_fraction * cfg.env_steps))
    dataset: list[PreferenceRecord] = metrics.preferences
    total = cfg.env_steps

    def evaluate(step: int) -> None:
        metrics.eval_steps.append(step)
        metrics.eval_returns.append(evaluate_policy(q, env, cfg.eval_episodes))
        ledger.invocations += cfg.eval_episodes

    evaluate(0)
    s = env.index(env.reset())
    states, actions = [s], []
    updates = 0
    for step in range(total):
        if learned and step % cfg.session_interval_steps == 0:
            pairs = sample_query_pairs(buffer, cfg.queries_per_session, cfg.segment_length, query_rng)
            dataset.extend(
                label_queries(env, pairs, cfg.tie_policy, buffer, query_rng, cfg.max_resample_attempts, ledger)
            )
            if dataset:
                update_on_preferences(model, env, dataset, cfg.reward_epochs, cfg.reward_batch_size, update_rng)
                relabel_buffer(replay, model, env)
                table = model.reward_table(env)

        a = int(select_action(q, env, s, schedule(step), env_rng))
        s_next, done = env.step_index(s, a)
        replay.add(s, a, s_next, done, table[s, a])
        actions.append(a)
        states.append(s_next)
        s = s_next

        if len(replay) >= cfg.dqn_batch_size:
            td_update(q, target, replay.sample(replay_rng, cfg.dqn_batch_size), cfg.gamma, adam, env)
            updates += 1
            if updates % cfg.target_sync_interval == 0:
                sync_target(q, target)

        if done or len(actions) >= env.max_steps:
            buffer.add(Trajectory(np.array(states), np.array(actions)))
            s = env.index(env.reset())
            states, actions = [s], []

        if (step + 1) % cfg.eval_interval_steps == 0 or step + 1 == total:
            evaluate(step + 1)

    metrics.final_heatmap = reward_heatmap(model, env)
