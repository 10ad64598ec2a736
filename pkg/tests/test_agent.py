import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from csdlma import neuralnet as nn
from csdlma.agent import (
    INITIAL_STATE, Agent, ChannelState, Gateway, Hyperparams, Minibatch, ReplayBuffer,
    compute_loss, encode, input_width, sample_continuous, select_action, td_target, update_epsilon,
)
from csdlma.netsim import AlohaConfig, Environment, Observation, TdmaConfig, build_channel

from oracles import finite_difference_grads

IDLE, BUSY, OK, BAD = Observation.IDLE, Observation.BUSY, Observation.SUCCESSFUL, Observation.COLLIDED


def test_channel_state_validation():
    ChannelState(0, IDLE).validate()
    ChannelState(3, BAD).validate()
    for bad in (ChannelState(0, OK), ChannelState(2, BUSY), ChannelState(-1, IDLE)):
        with pytest.raises(ValueError):
            bad.validate()
    assert INITIAL_STATE == (0, IDLE)


def test_encoding_is_injective_and_one_hot():
    pairs = [(a, o) for a in range(11) for o in range(4)]
    codes = encode(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]), 11)
    assert codes.shape == (44, input_width(11)) == (44, 15)
    assert np.all(codes.sum(axis=1) == 2)
    assert len({c.tobytes() for c in codes}) == 44


def test_hyperparams_defaults_and_validation():
    h = Hyperparams()
    assert (h.history, h.gamma, h.buffer_size, h.batch_size, h.target_sync_every) == (20, 0.999, 1000, 32, 20)
    assert h.epsilon_floor == 0.005 and h.num_actions == 11
    with pytest.raises(ValueError):
        h.with_overrides(nonsense=1)
    with pytest.raises(ValueError):
        Hyperparams(gamma=0)
    with pytest.raises(ValueError):
        Hyperparams(buffer_size=20)


def test_update_epsilon():
    assert update_epsilon(1.0) == 0.995
    assert update_epsilon(0.005) == 0.005
    eps = 1.0
    for k in range(1, 2001):
        eps = update_epsilon(eps)
        assert eps == pytest.approx(max(0.995**k, 0.005), rel=1e-12)


def test_select_action_examples():
    rng = np.random.default_rng(0)
    q = np.random.default_rng(1).uniform(size=(3, 11))
    assert select_action(q, BUSY, 0.0, 0, rng) == 0
    assert select_action(q, BAD, 1.0, 0, rng) == 0
    sums = np.zeros((1, 11))
    sums[0, 0], sums[0, 5] = 1.0, 2.0
    assert select_action(sums, IDLE, 0.0, 0, rng) == 5


def test_select_action_explores_uniformly():
    rng = np.random.default_rng(0)
    n, k = 100_000, 11
    draws = [select_action(None, IDLE, 1.0, 0, rng, num_actions=k) for _ in range(n)]
    counts = np.bincount(draws, minlength=k)
    sigma = math.sqrt(n * (1 / k) * (1 - 1 / k))
    assert np.all(np.abs(counts - n / k) < 3 * sigma)


def test_td_target_examples():
    assert td_target(2.0, 1, 0.9, 5.0) == 2.0 + 0.9 * 5.0
    # 0.95 * (1 - 0.999**10) / 0.001 from a 30-digit mpmath evaluation
    assert td_target(9.5, 10, 0.999, 0.0) == pytest.approx(9.457363800739201, rel=1e-12)
    assert td_target(0.0, 7, 0.99, 3.0) == pytest.approx(0.99**7 * 3.0, rel=1e-14)
    assert td_target(9.5, 10, 1.0, 1.0) == 10.5


@given(st.floats(0, 10), st.integers(1, 10), st.floats(0.5, 0.9999), st.floats(-5, 5))
def test_td_target_is_amortised_sum(r, d, gamma, q):
    expected = sum(r / d * gamma**k for k in range(d)) + gamma**d * q
    assert td_target(r, d, gamma, q) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def fill(buffer, n, start=0):
    for k in range(start, start + n):
        a = k % 3
        obs = IDLE if a == 0 else OK
        buffer.record(ChannelState(0, IDLE), a, max(a, 1), [float(k), 0.0], ChannelState(a, obs), step=k)


def test_buffer_eviction_and_duration_check():
    buf = ReplayBuffer(1000, 2)
    fill(buf, 1001)
    assert len(buf) == 1000
    assert buf.reward[buf.slots()[0], 0] == 1.0
    with pytest.raises(ValueError):
        buf.record(INITIAL_STATE, 3, 1, [0, 0], ChannelState(3, OK))
    with pytest.raises(ValueError):
        buf.record(INITIAL_STATE, 0, 1, [0], INITIAL_STATE)


def test_small_buffer_has_no_samples():
    buf = ReplayBuffer(10, 2)
    fill(buf, 2)
    assert len(buf.window_ends(2)) == 0
    with pytest.raises(ValueError):
        sample_continuous(buf, 4, 2, np.random.default_rng())


def test_three_entry_buffer_has_two_positions():
    buf = ReplayBuffer(10, 2)
    chain = [ChannelState(0, IDLE), ChannelState(0, BUSY), ChannelState(4, OK), ChannelState(0, IDLE)]
    for k in range(3):
        a = chain[k + 1].action
        buf.record(chain[k], a, max(a, 1), [0, 0], chain[k + 1])
    assert list(buf.window_ends(2)) == [1, 2]
    batch = sample_continuous(buf, 200, 2, np.random.default_rng(0))
    seen = {tuple(map(tuple, zip(a, o))) for a, o in zip(batch.actions, batch.observations)}
    assert seen == {((0, 0), (0, 1)), ((0, 1), (4, 2))}
    # successor windows are the state windows shifted by one
    assert np.array_equal(batch.next_actions[:, :-1], batch.actions[:, 1:])
    assert np.array_equal(batch.next_observations[:, :-1], batch.observations[:, 1:])


def test_windows_never_straddle_step_gaps():
    buf = ReplayBuffer(50, 2)
    fill(buf, 10, start=0)
    fill(buf, 10, start=100)
    ends = buf.window_ends(4)
    steps = buf.step[buf.slots()]
    for e in ends:
        assert steps[e] - steps[e - 3] == 3
    assert len(ends) == 14


def run_agent(steps, seed=0, **hyper):
    env = Environment(build_channel([TdmaConfig(5, frozenset({2, 5}), 10), AlohaConfig(0.5, 10)], seed=seed))
    hyper = {"history": 4, "hidden": 8, "batch_size": 4, "buffer_size": 50, "dtype": "float64", **hyper}
    agent = Agent(2, 1.0, Hyperparams(**hyper), seed=seed)
    log = []
    for _ in range(steps):
        prev = agent.last_observation
        states = agent.state
        a = agent.act()
        obs, r, d = env.act(a)
        agent.observe(a, obs, r, d)
        log.append((prev, a, obs, r, d, states))
    return agent, env, log


def test_buffer_reconstructs_live_states():
    agent, _, log = run_agent(40)
    buf = agent.buffer
    for pos in range(3, len(buf)):
        step = buf.step[buf.slots()[pos]]
        assert buf.state_at(pos, 4) == log[step][5]


def test_carrier_sense_and_duration_bookkeeping():
    agent, env, log = run_agent(400)
    for prev, a, *_ in log:
        assert a == 0 or prev == IDLE
    assert sum(entry[4] for entry in log) == env.channel.now


def test_training_cadence_and_target_sync():
    agent = Agent(1, 0.0, Hyperparams(history=4, hidden=8, batch_size=4, dtype="float64"), seed=1)
    env = Environment(build_channel([AlohaConfig(0.5, 10)], seed=1))
    before = nn.copy_params(agent.online)
    target_changes = []
    for step in range(1, 61):
        tgt = nn.copy_params(agent.target)
        a = agent.act()
        agent.observe(a, *env.act(a))
        if step <= 4:
            assert all(np.array_equal(before[k], agent.online[k]) for k in before)
        if any(not np.array_equal(tgt[k], agent.target[k]) for k in tgt):
            target_changes.append(step)
    assert agent.updates == 60 - 4
    assert target_changes == [20, 40, 60]


def test_agent_runs_are_deterministic():
    _, _, a = run_agent(120, seed=5)
    _, _, b = run_agent(120, seed=5)
    assert [(x[1], x[2], tuple(x[3])) for x in a] == [(x[1], x[2], tuple(x[3])) for x in b]


def test_pure_exploration_ignores_parameters():
    def trace(perturb):
        env = Environment(build_channel([AlohaConfig(0.5, 10)], seed=2))
        agent = Agent(1, 0.0, Hyperparams(history=4, hidden=8, batch_size=4, epsilon_floor=1.0, dtype="float64"), seed=2)
        if perturb:
            for p in (agent.online, agent.target):
                for v in p.values():
                    v += np.random.default_rng(9).normal(size=v.shape)
        out = []
        for _ in range(150):
            a = agent.act()
            agent.observe(a, *env.act(a))
            out.append(a)
        return out

    assert trace(False) == trace(True)


def hand_batch(next_obs):
    return Minibatch(
        actions=np.array([[0, 0]]), observations=np.array([[0, 0]]),
        next_actions=np.array([[0, 2]]), next_observations=np.array([[0, next_obs]]),
        action=np.array([2]), duration=np.array([2]), reward=np.array([[1.5, 0.0]]),
    )


def constant_net(values):
    values = np.asarray(values, dtype=float)
    arch = nn.Architecture("feedforward", input_width(values.shape[1]), 2, values.shape[0], values.shape[1], 4)
    params = nn.zeros_like(nn.init_params(arch, np.random.default_rng(0)))
    params["out_b"] = values.reshape(-1).copy()
    return arch, params


def test_loss_by_hand():
    # Q(s, .) = Q(s', .) = [[1, 2, 3], [4, 5, 6]] for every state
    arch, params = constant_net([[1, 2, 3], [4, 5, 6]])
    # s' ends in SUCCESSFUL, so the bootstrap action is 0: q_boot = [1, 4]
    # targets: 0.75 * 1.9 + 0.81 * 1 = 2.235 and 0.81 * 4 = 3.24; predictions [3, 6]
    loss, targets = compute_loss(hand_batch(int(OK)), arch, params, params, 0.0, 0.9)
    np.testing.assert_allclose(targets, [[2.235, 3.24]], rtol=1e-12)
    assert loss == pytest.approx((0.765**2 + 2.76**2) / 2, rel=1e-10)
    # an idle s' lets the fairness argmax pick column 2: q_boot = [3, 6]
    _, targets = compute_loss(hand_batch(int(IDLE)), arch, params, params, 0.0, 0.9)
    np.testing.assert_allclose(targets, [[1.425 + 0.81 * 3, 0.81 * 6]], rtol=1e-12)


def test_loss_fixed_point_is_zero():
    arch, params = constant_net(np.full((3, 4), 2.5))
    batch = Minibatch(np.zeros((5, 2), int), np.zeros((5, 2), int), np.zeros((5, 2), int), np.zeros((5, 2), int),
                      np.array([0, 1, 2, 3, 0]), np.array([1, 1, 2, 3, 1]), np.zeros((5, 3)))
    loss, _ = compute_loss(batch, arch, params, params, 1.0, 1.0)
    assert loss == 0.0
    with pytest.raises(ValueError):
        compute_loss(batch._replace(action=np.array([], int)), arch, params, params, 1.0, 1.0)


def random_batch(rng, n, history, nodes, actions, unit=False):
    acts = rng.integers(0, actions, size=(n, history + 1))
    acts[:, ::2] = 0
    obs = np.where(acts == 0, rng.integers(0, 2, size=acts.shape), rng.integers(2, 4, size=acts.shape))
    action = acts[:, -1]
    dur = np.ones(n, int) if unit else np.maximum(action, 1)
    return Minibatch(acts[:, :-1], obs[:, :-1], acts[:, 1:], obs[:, 1:], action, dur,
                     rng.uniform(0, 9.5, size=(n, nodes)))


@pytest.mark.parametrize("variant", nn.VARIANTS)
def test_loss_gradients_match_finite_differences(variant):
    rng = np.random.default_rng(0)
    arch = nn.Architecture(variant, input_width(4), 3, 2, 4, 8)
    online = nn.init_params(arch, rng)
    target = nn.init_params(arch, rng)
    batch = random_batch(rng, 6, 3, 2, 4)
    _, _, grads = compute_loss(batch, arch, online, target, 2.0, 0.95, with_grads=True)
    numeric = finite_difference_grads(lambda p: compute_loss(batch, arch, p, target, 2.0, 0.95)[0], online)
    for name in grads:
        err = np.abs(grads[name] - numeric[name])
        assert np.all(err <= 1e-4 * np.maximum(np.abs(numeric[name]), 1e-5)), name


def test_gateway_round_robin():
    gw = Gateway(2)
    assert [gw.dispatch(a) for a in (3, 0, 5, 0, 0, 2, 10)] == [1, None, 2, None, None, 1, 2]
    with pytest.raises(ValueError):
        Gateway(0)


def test_multi_agent_credits_network_reward():
    env = Environment(build_channel([AlohaConfig(0.0, 10)], seed=0))
    agent = Agent(1, 50.0, Hyperparams(history=4, hidden=8, batch_size=4), num_agents=2, seed=0)
    obs, r, d = env.act(5)
    agent.observe(5, obs, r, d)
    assert obs is OK and agent.buffer.reward[0, 0] == 4.5


def test_agent_checkpoint_round_trip(tmp_path):
    agent, _, _ = run_agent(30)
    path = agent.save(tmp_path / "agent.npz", {"run": 1})
    other = Agent(2, 1.0, agent.hyper, seed=99)
    other.load(path)
    x = agent.encoded_state()
    np.testing.assert_array_equal(nn.forward(other.arch, other.online, x), nn.forward(agent.arch, agent.online, x))
    wrong = Agent(3, 1.0, agent.hyper)
    with pytest.raises(ValueError):
        wrong.load(path)
    assert x.shape == (4, 15)
