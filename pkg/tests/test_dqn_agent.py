import math

import numpy as np
import pytest

from pref_init_lab import grid_env
from pref_init_lab.dqn_agent import (
    EpsilonSchedule,
    OracleReward,
    ReplayBatch,
    ReplayBuffer,
    ReplayTransition,
    evaluate_policy,
    make_qnet,
    relabel_buffer,
    select_action,
    sync_target,
    td_update,
)
from pref_init_lab.grid_env import Action, GridEnv, GridPos
from pref_init_lab.nn_core import AdamState, DenseNet, InitScheme, forward
from pref_init_lab.reward_model import RewardNet

ENV = GridEnv(7)


def linear_q(env, table):
    """Q-network whose output for one-hot state ``s`` is ``table[s]``."""
    return DenseNet([env.n_states, 4], [np.asarray(table, dtype=float).T.copy()], [np.zeros(4)])


def filled_replay(env, rng, count=200, model=None):
    replay = ReplayBuffer(500)
    table = (model or RewardNet.create(env, InitScheme.KAIMING_UNIFORM, rng)).reward_table(env)
    s = 0
    for _ in range(count):
        a = int(rng.integers(4))
        nxt, done = env.step_index(s, a)
        replay.add(s, a, nxt, done, table[s, a])
        s = 0 if done else nxt
    return replay


def test_select_action_greedy_and_ties():
    table = np.zeros((ENV.n_states, 4))
    table[0] = [1, 0, 0, 0]
    rng = np.random.default_rng(0)
    assert select_action(linear_q(ENV, table), ENV, GridPos(0, 0), 0.0, rng) is Action.UP
    assert select_action(linear_q(ENV, np.zeros((ENV.n_states, 4))), ENV, GridPos(3, 3), 0.0, rng) is Action.UP
    table[5] = [0, 0, 2, 2]
    assert select_action(linear_q(ENV, table), ENV, 5, 0.0, rng) is Action.LEFT
    with pytest.raises(ValueError):
        select_action(linear_q(ENV, table), ENV, 0, 1.5, rng)


def test_select_action_uniform_when_fully_random():
    q = linear_q(ENV, np.arange(ENV.n_states * 4).reshape(-1, 4))
    rng = np.random.default_rng(1)
    counts = np.bincount([int(select_action(q, ENV, 0, 1.0, rng)) for _ in range(10_000)], minlength=4)
    assert np.all(np.abs(counts / 10_000 - 0.25) < 0.03)


def test_epsilon_schedule():
    sched = EpsilonSchedule(1.0, 0.05, 100)
    assert sched(0) == 1.0
    assert sched(50) == pytest.approx(0.525)
    assert sched(100) == 0.05 and sched(10_000) == 0.05
    with pytest.raises(ValueError):
        EpsilonSchedule(0.1, 0.5, 10)


def test_td_targets():
    rng = np.random.default_rng(2)
    q = make_qnet(ENV, rng)
    target = make_qnet(ENV, rng)
    batch = ReplayBatch(np.array([40, 3]), np.array([3, 1]), np.array([ENV.n_states - 1, 10]), np.array([True, False]), np.array([0.7, -0.2]))
    q_pred = forward(q, ENV.state_onehot(batch.s))[0][[0, 1], batch.a]
    t_next = forward(target, ENV.state_onehot(batch.s_next))[0].max(axis=1)
    expected = np.mean((q_pred - (batch.r_hat + 0.9 * np.array([0.0, 1.0]) * t_next)) ** 2)
    assert td_update(q, target, batch, 0.9, AdamState.for_net(q), ENV) == pytest.approx(expected, rel=1e-12)

    q2 = make_qnet(ENV, np.random.default_rng(3))
    q_pred = forward(q2, ENV.state_onehot(batch.s))[0][[0, 1], batch.a]
    loss = td_update(q2, target, batch, 0.0, AdamState.for_net(q2), ENV)
    assert loss == pytest.approx(np.mean((q_pred - batch.r_hat) ** 2), rel=1e-12)


def test_td_perfect_fit_is_fixed_point():
    table = np.zeros((ENV.n_states, 4))
    q = linear_q(ENV, table)
    target = q.copy()
    batch = ReplayBatch(np.array([0, 8]), np.array([1, 3]), np.array([7, 9]), np.array([False, False]), np.zeros(2))
    before = [p.copy() for p in q.params]
    assert td_update(q, target, batch, 0.99, AdamState.for_net(q), ENV) == 0.0
    for p, b in zip(q.params, before):
        np.testing.assert_array_equal(p, b)


def test_td_update_validates():
    q = make_qnet(ENV, np.random.default_rng(0))
    empty = ReplayBatch(*(np.zeros(0, dtype=int) for _ in range(4)), np.zeros(0))
    with pytest.raises(ValueError):
        td_update(q, q.copy(), empty, 0.9, AdamState.for_net(q), ENV)


def test_replay_from_transitions():
    ts = [
        ReplayTransition(GridPos(0, 0), Action.RIGHT, GridPos(0, 1), False, 0.1),
        ReplayTransition(GridPos(6, 5), Action.RIGHT, GridPos(6, 6), True, 0.3),
    ]
    b = ReplayBatch.from_transitions(ENV, ts)
    assert b.s.tolist() == [0, 47] and b.s_next.tolist() == [1, 48] and b.terminal.tolist() == [False, True]


def test_replay_ring_buffer_order():
    replay = ReplayBuffer(3)
    for i in range(5):
        replay.add(i, 0, i, False, float(i))
    assert len(replay) == 3
    assert [t.r_hat for t in replay.transitions(ENV)] == [2.0, 3.0, 4.0]


def test_relabel_buffer():
    rng = np.random.default_rng(4)
    replay = filled_replay(ENV, rng)
    fields = (replay.s.copy(), replay.a.copy(), replay.s_next.copy(), replay.terminal.copy())
    model = RewardNet.create(ENV, InitScheme.KAIMING_UNIFORM, np.random.default_rng(5))
    relabel_buffer(replay, model, ENV)
    once = replay.r_hat.copy()
    relabel_buffer(replay, model, ENV)
    np.testing.assert_array_equal(replay.r_hat, once)
    for before, after in zip(fields, (replay.s, replay.a, replay.s_next, replay.terminal)):
        np.testing.assert_array_equal(before, after)
    n = len(replay)
    np.testing.assert_allclose(once[:n], model.predict(ENV.encode_batch(replay.s[:n], replay.a[:n])), atol=1e-14)
    relabel_buffer(replay, RewardNet.create(ENV, InitScheme.ZEROS, rng), ENV)
    assert np.all(replay.r_hat[:n] == 0.0)


def test_sync_target():
    rng = np.random.default_rng(6)
    q, target = make_qnet(ENV, rng), make_qnet(ENV, rng)
    q_before = [p.copy() for p in q.params]
    sync_target(q, target)
    x = np.eye(ENV.n_states)
    np.testing.assert_array_equal(forward(q, x)[0], forward(target, x)[0])
    sync_target(q, target)
    for p, t, b in zip(q.params, target.params, q_before):
        assert p.tobytes() == t.tobytes() == b.tobytes()


def test_evaluate_never_leaving_start():
    table = np.zeros((ENV.n_states, 4))
    table[0] = [1, 0, 0, 0]  # Up at (0,0) bumps the wall forever
    ret = evaluate_policy(linear_q(ENV, table), ENV, 3)
    assert ret == pytest.approx(28 * -6 * math.sqrt(2), abs=1e-9)
    assert ret == pytest.approx(-237.587, abs=1e-3)


def test_evaluate_edge_path():
    table = np.zeros((ENV.n_states, 4))
    for s in range(ENV.n_states):
        r, c = ENV.pos(s)
        table[s, Action.DOWN if r < 6 else Action.RIGHT] = 1.0
    # hand-summed successor distances: down the left edge then along the bottom
    expected = -sum(math.hypot(r - 6, 0 - 6) for r in range(1, 7)) - sum(math.hypot(0, c - 6) for c in range(1, 7))
    ret = evaluate_policy(linear_q(ENV, table), ENV, 5)
    assert ret == pytest.approx(expected, abs=1e-12)


def test_evaluate_deterministic():
    q = make_qnet(ENV, np.random.default_rng(7))
    assert evaluate_policy(q, ENV, 1) == evaluate_policy(q, ENV, 5)
    with pytest.raises(ValueError):
        evaluate_policy(q, ENV, 0)


def test_oracle_reward_table_is_successor_reward():
    table = OracleReward().reward_table(ENV)
    assert table[ENV.index(GridPos(6, 5)), Action.RIGHT] == 0.0
    assert table[0, Action.UP] == ENV.oracle_reward(GridPos(0, 0))
    assert table[0, Action.DOWN] == ENV.oracle_reward(GridPos(1, 0))


def test_td_losses_ignore_oracle(monkeypatch):
    """The learning signal is the stored learned reward; corrupting the oracle changes nothing."""

    def run():
        rng = np.random.default_rng(8)
        replay = filled_replay(ENV, rng)
        q = make_qnet(ENV, rng)
        target = q.copy()
        adam = AdamState.for_net(q)
        return [td_update(q, target, replay.sample(rng, 32), 0.99, adam, ENV) for _ in range(30)]

    clean = run()

    def corrupt(self, *args, **kwargs):
        raise AssertionError("oracle consulted during TD learning")

    monkeypatch.setattr(grid_env.GridEnv, "oracle_reward", corrupt)
    monkeypatch.setattr(grid_env.GridEnv, "oracle_reward_table", corrupt)
    assert run() == clean
