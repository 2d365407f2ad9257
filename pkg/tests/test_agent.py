import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbec.agent import (AgentConfig, ChunkBuffer, MBECAgent, ReplayBuffer, Transition, discounted_suffixes,
                        epsilon_at, greedy, mc_returns, q_mbec, run_training, select_action)
from mbec.envs import CartPole, MazeEnv, MazeSpec
from mbec.harness.baselines import run_dqn
from mbec.memcore import EpisodicMemory, ReadRule
from mbec.rng import Streams, stream
from mbec.trajmodel import TrajectoryModel, TrajectoryVec
from mbec.valuenets import RewardModel

SMALL = dict(traj_hidden=8, reward_hidden=8, gate_hidden=8, q_hidden=16, batch_size=8)


def maze(seed=0, mode="plain", max_steps=1000):
    return MazeEnv(MazeSpec(3, mode, max_steps=max_steps), np.random.default_rng(seed))


def test_mc_returns_examples():
    assert mc_returns([1, 0, 2], 0.5) == pytest.approx(1.5)
    assert mc_returns([0, 0, 0, 0], 0.9) == 0.0
    assert mc_returns([1, 1, 1], 1.0) == 3.0


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(0, 1))
def test_suffixes_match_brute_force(rewards, gamma):
    out = discounted_suffixes(rewards, gamma)
    for i in range(len(rewards)):
        brute = sum(gamma ** j * r for j, r in enumerate(rewards[i:]))
        assert out[i] == pytest.approx(brute, abs=1e-9)


def test_greedy_examples(rng):
    assert select_action([1, 3, 2], 0.0, rng) == 1
    assert select_action([2, 2], 0.0, rng) == 0
    assert greedy([0.5, 0.5, 0.5]) == 0


def test_full_exploration_is_uniform(rng):
    n = 10_000
    counts = np.bincount([select_action([0, 10, 0, 0], 1.0, rng) for _ in range(n)], minlength=4)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) < 3 * sigma)


def test_epsilon_schedule():
    assert epsilon_at(0, 1000) == 1.0
    assert epsilon_at(50, 1000) == pytest.approx(1 - 0.99 * 0.5)
    assert epsilon_at(100, 1000) == pytest.approx(0.01)
    assert epsilon_at(900, 1000) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        select_action([0, 1], 1.5, np.random.default_rng(0))


def qm_parts(state_dim=2, n_actions=3, hidden=4):
    traj = TrajectoryModel(state_dim, n_actions, hidden, np.random.default_rng(1))
    reward = RewardModel(state_dim, n_actions, 8, np.random.default_rng(2))
    return traj, reward


def test_q_mbec_gamma_zero_is_reward_model(rng):
    traj, reward = qm_parts()
    mem = EpisodicMemory(10, 4)
    mem._insert(rng.standard_normal(4), 3.0)
    s = rng.standard_normal(2)
    out = q_mbec(s, traj.initial(), mem, traj, reward, ReadRule.average(), 0.0)
    np.testing.assert_allclose(out.values, reward.predict_all(s))


def test_q_mbec_single_slot_zero_reward(rng):
    traj, reward = qm_parts()
    for t in reward.params:
        t.data[...] = 0.0
    mem = EpisodicMemory(10, 4)
    mem._insert(rng.standard_normal(4), 2.5)
    out = q_mbec(rng.standard_normal(2), traj.initial(), mem, traj, reward, ReadRule.mixed(0.5), 0.9, rng)
    np.testing.assert_allclose(out.values, 0.9 * 2.5)
    assert not out.cold


def test_q_mbec_hand_built_three_actions(rng):
    traj, reward = qm_parts()
    s = rng.standard_normal(2)
    prev = TrajectoryVec(rng.standard_normal(4) * 0.3, rng.standard_normal(4) * 0.3)
    keys = traj.lookahead(s, prev)
    mem = EpisodicMemory(10, 4, k=2)
    for key, v in zip(keys, [1.0, -1.0, 4.0]):
        mem._insert(key + 0.01, v)
    out = q_mbec(s, prev, mem, traj, reward, ReadRule.average(), 0.8)
    r = reward.predict_all(s)
    for a in range(3):
        d = np.linalg.norm(mem.keys[:3] - keys[a], axis=1)
        nn = np.argsort(d)[:2]
        w = 1 / (d[nn] + 1e-3)
        assert out.values[a] == pytest.approx(r[a] + 0.8 * (w @ mem.values[nn]) / w.sum(), rel=1e-12)


def test_q_mbec_cold_start(rng):
    traj, reward = qm_parts()
    s = rng.standard_normal(2)
    out = q_mbec(s, traj.initial(), EpisodicMemory(5, 4), traj, reward, ReadRule.average(), 0.9)
    assert out.cold
    np.testing.assert_allclose(out.values, reward.predict_all(s))


def test_chunk_buffer_marks_every_L_steps():
    buf = ChunkBuffer(3)
    tau = TrajectoryVec.zeros(2)
    added = [buf.maybe_add(t, tau) for t in range(1, 8)]
    assert added == [False, False, True, False, False, True, False]
    rewards = [1.0] * 7
    pairs = buf.returns(rewards, 0.5)
    assert [v for _, v in pairs] == pytest.approx([mc_returns(rewards[2:], 0.5), mc_returns(rewards[5:], 0.5)])


def test_chunk_longer_than_episode_writes_nothing():
    buf = ChunkBuffer(10)
    for t in range(1, 6):
        buf.maybe_add(t, TrajectoryVec.zeros(2))
    assert buf.returns([1.0] * 5, 0.9) == []


def test_replay_buffer_grows_and_wraps(rng):
    rb = ReplayBuffer(3000, 2, 1)
    tau = TrajectoryVec(np.ones(1), np.ones(1))
    for i in range(3500):
        rb.add(Transition(np.full(2, i), i % 2, np.zeros(2), float(i), tau, tau, False))
    assert len(rb) == 3000
    batch = rb.sample(64, rng)
    assert batch["s"].shape == (64, 2)
    assert batch["r"].min() >= 500


def test_zero_budget_gives_empty_log():
    log = run_training(AgentConfig(**SMALL), maze(), "MBEC", total_steps=0)
    assert len(log) == 0
    assert log.agent.memory.occupancy == 0


def test_long_chunks_leave_memory_empty():
    cfg = AgentConfig(chunk_len=2000, **SMALL)
    log = run_training(cfg, maze(), "MBEC", total_steps=300, seed=1)
    assert len(log) > 0
    assert log.agent.memory.occupancy == 0


def test_identical_runs_are_identical(tmp_path):
    cfg = AgentConfig(**SMALL)
    a = run_training(cfg, maze(0, max_steps=40), "MBEC", total_steps=400, seed=3)
    b = run_training(cfg, maze(0, max_steps=40), "MBEC", total_steps=400, seed=3)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert len(a) > 3
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_occupancy_bounded_by_capacity():
    cfg = AgentConfig(mem_capacity=7, chunk_len=2, **SMALL)
    seen = []
    log = run_training(cfg, maze(1, max_steps=40), "MBEC", total_steps=600, seed=0,
                       on_episode=lambda row: seen.append(row["memory_occupancy"]))
    assert max(seen) == 7
    assert log.agent.memory.occupancy <= 7


def test_written_values_are_discounted_suffixes():
    cfg = AgentConfig(chunk_len=3, p_u=0.0, **SMALL)
    env = maze(2)
    episodes, current = [], []
    step = env.step

    def recording_step(a):
        out = step(a)
        current.append(out[1])
        if out[2]:
            episodes.append(list(current))
            current.clear()
        return out

    env.step = recording_step
    streams = Streams(5)
    agent = MBECAgent(cfg, env.obs_dim, env.n_actions, "MBEC", streams)
    writes = []
    write = agent.memory.write

    def recording_write(key, value, *args, **kw):
        writes.append(value)
        return write(key, value, *args, **kw)

    agent.memory.write = recording_write
    run_training(cfg, env, "MBEC", total_steps=500, seed=5, agent=agent, streams=streams)
    expected = []
    for rewards in episodes:
        for t in range(3, len(rewards) + 1, 3):
            expected.append(sum(0.99 ** j * r for j, r in enumerate(rewards[t - 1:])))
    np.testing.assert_allclose(writes, expected, rtol=1e-12)


def test_mbec_plus_logs_contribution_traces():
    cfg = AgentConfig(**SMALL)
    log = run_training(cfg, CartPole(np.random.default_rng(0)), "MBEC++", total_steps=300, seed=0)
    assert len(log.episodic_match) == 300
    assert not np.isnan(log.column("episodic_contribution")).any()
    assert log.agent.values.syncs == 3


def test_memory_disabled_agent_acts_like_dqn():
    cfg = AgentConfig(memory_enabled=False, **SMALL)
    a_plus, a_dqn = [], []
    log_plus = run_training(cfg, CartPole(np.random.default_rng(0)), "MBEC++", 600, seed=4, actions_out=a_plus)
    log_dqn = run_dqn(cfg, CartPole(np.random.default_rng(0)), 600, seed=4, actions_out=a_dqn)
    assert a_plus == a_dqn
    np.testing.assert_array_equal(log_plus.column("td_loss"), log_dqn.column("td_loss"))


def test_unknown_mode_and_config_errors():
    with pytest.raises(ValueError):
        MBECAgent(AgentConfig(), 2, 4, "MBEC+++")
    with pytest.raises(ValueError):
        AgentConfig(kk=5)
    with pytest.raises(ValueError):
        AgentConfig(eps_start=0.1, eps_end=0.5)


def test_named_streams_are_independent():
    a = stream(0, "explore").random(3)
    b = stream(0, "replay").random(3)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, Streams(0)["explore"].random(3))


def test_checkpoint_written(tmp_path):
    from mbec import diffnum as dn
    cfg = AgentConfig(**SMALL)
    log = run_training(cfg, CartPole(np.random.default_rng(0)), "MBEC++", 100, seed=0)
    log.agent.save_checkpoint(tmp_path / "c.bin")
    arrays = dn.load_arrays(tmp_path / "c.bin")
    assert "memory.keys" in arrays and any(k.startswith("q.") for k in arrays)
