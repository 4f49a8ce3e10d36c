import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atfg.dynamics import AircraftConfig
from atfg.env import AttitudeEnv, TaskConfig
from atfg.ppo import (
    Batch,
    PPOAgent,
    RandomAgent,
    TrainConfig,
    TrainingError,
    _mlp_forward,
    forward,
    gae,
    gaussian_log_prob,
    init_policy,
    load_checkpoint,
    loss_and_grads,
    ppo_update,
    save_checkpoint,
    squash_correction,
    train,
)
from atfg.sensors import StackedState
from tests.oracles import gae_direct, naive_forward


def random_net(seed=0, memory=1, scale=0.5):
    rng = np.random.default_rng(seed)
    net = init_policy(rng, memory, obs_offset=rng.normal(0, 1, 7 * memory),
                      obs_scale=rng.uniform(0.5, 2, 7 * memory))
    for p in net.params():
        p[...] = rng.normal(0, scale, p.shape)
    return net


def random_batch(net, n=24, seed=1, logp_noise=0.3):
    rng = np.random.default_rng(seed)
    obs = rng.normal(0, 2, (n, net.input_size))
    x = net.normalize(obs)
    mu, _ = _mlp_forward(net.pi, x)
    raw = mu + np.exp(net.log_std) * rng.standard_normal(mu.shape)
    logp = gaussian_log_prob(raw, mu, net.log_std) + rng.normal(0, logp_noise, n)
    return Batch(obs, raw, logp, rng.normal(0, 1, n), rng.normal(0, 1, n))


# ---------------------------------------------------------------- forward


def test_zero_network_outputs_zero():
    net = init_policy(np.random.default_rng(0))
    for p in net.params():
        p[...] = 0.0
    mean, value = forward(net, np.ones(7))
    assert np.array_equal(mean, np.zeros(4)) and value == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 50))
def test_outputs_always_legal(seed, weight_scale):
    net = random_net(seed, scale=weight_scale)
    x = np.random.default_rng(seed).normal(0, 100, (16, 7))
    mean, value = forward(net, x)
    assert np.all(np.abs(mean) <= 1.0) and np.all(np.isfinite(value))


@pytest.mark.parametrize("seed, memory", [(0, 1), (1, 2), (2, 3)])
def test_forward_matches_naive_loops(seed, memory):
    net = random_net(seed, memory)
    x = np.random.default_rng(seed + 10).normal(0, 1, 7 * memory)
    mean, value = forward(net, x)
    ref_mean, ref_value = naive_forward(net, x)
    assert np.max(np.abs(mean - ref_mean)) <= 1e-12
    assert abs(value - ref_value) <= 1e-12


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        forward(random_net(), np.zeros(8))


def test_squash_correction_matches_derivative():
    u = np.array([[-3.0, -0.5, 0.0, 2.0]])
    expected = np.sum(np.log(1 - np.tanh(u) ** 2), axis=-1)
    assert squash_correction(u) == pytest.approx(expected, rel=1e-12)


# -------------------------------------------------------------------- gae


def _episode_data(seed, n=50):
    rng = np.random.default_rng(seed)
    rewards = rng.normal(0, 1, n)
    values = rng.normal(0, 1, n + 1)
    dones = (rng.random(n) < 0.1).astype(float)
    return rewards, values, dones


def test_gae_lambda_zero_is_td_residual():
    r, v, d = _episode_data(0)
    adv, _ = gae(r, v, d, 0.97, 0.0, normalize=False)
    expected = r + 0.97 * v[1:] * (1 - d) - v[:-1]
    assert np.array_equal(adv, expected)


def test_gae_gamma_zero_returns_rewards():
    r, v, d = _episode_data(1)
    _, ret = gae(r, v, d, 0.0, 0.95, normalize=False)
    assert np.allclose(ret, r, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_gae_matches_direct_summation(seed):
    r, v, d = _episode_data(seed)
    adv, ret = gae(r, v, d, 0.99, 0.95, normalize=False)
    ref = gae_direct(r, v, d, 0.99, 0.95)
    assert np.allclose(adv, ref, rtol=0, atol=1e-12)
    assert np.allclose(ret, ref + v[:-1], rtol=0, atol=1e-12)


def test_gae_normalized():
    r, v, d = _episode_data(3)
    adv, _ = gae(r, v, d, 0.99, 0.95)
    assert abs(adv.mean()) < 1e-12 and abs(adv.std() - 1) < 1e-6


def test_gae_shape_errors():
    with pytest.raises(ValueError):
        gae([], [0.0], [], 0.99, 0.95)
    with pytest.raises(ValueError):
        gae([1.0, 2.0], [0.0, 0.0], [0, 0], 0.99, 0.95)


# -------------------------------------------------------------- gradients


def _numeric_grads(net, batch, cfg, h=1e-5):
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = loss_and_grads(net, batch, cfg, with_grads=False)[0]
            p[i] = old - h
            down = loss_and_grads(net, batch, cfg, with_grads=False)[0]
            p[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


@pytest.mark.parametrize("entropy_coef", [0.0, 0.01])
def test_analytic_gradients_match_finite_differences(entropy_coef):
    net = init_policy(np.random.default_rng(4), hidden=(8, 8))
    rng = np.random.default_rng(5)
    for p in net.params():
        p[...] = rng.normal(0, 0.5, p.shape)
    batch = random_batch(net, n=16)
    cfg = TrainConfig(entropy_coef=entropy_coef)
    _, analytic, stats = loss_and_grads(net, batch, cfg)
    assert 0 < stats["clip_frac"] < 1  # both branches of the clip are exercised
    numeric = _numeric_grads(net, batch, cfg)
    worst = max(
        float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)))
        for a, n in zip(analytic, numeric)
    )
    assert worst <= 1e-4


def test_unit_ratio_clipped_equals_unclipped():
    net = random_net(2)
    batch = random_batch(net, logp_noise=0.0)
    loose = loss_and_grads(net, batch, TrainConfig(clip=0.9))
    tight = loss_and_grads(net, batch, TrainConfig(clip=0.01))
    assert loose[2]["clip_frac"] == tight[2]["clip_frac"] == 0.0
    assert loose[0] == tight[0]
    assert all(np.array_equal(a, b) for a, b in zip(loose[1], tight[1]))


def _vanilla_surrogate(net, batch):
    mu, _ = _mlp_forward(net.pi, net.normalize(batch.obs))
    return -np.mean(batch.advantages * gaussian_log_prob(batch.raw_actions, mu, net.log_std))


def test_first_update_follows_vanilla_policy_gradient():
    # Two-state bandit: positive actions pay in state A, negative in state B.
    net = init_policy(np.random.default_rng(0), hidden=(4, 4))
    rng = np.random.default_rng(1)
    states = np.zeros((2, 7))
    states[1, 0] = 1.0
    obs = np.repeat(states, 20, axis=0)
    mu, _ = _mlp_forward(net.pi, obs)
    raw = mu + np.exp(net.log_std) * rng.standard_normal(mu.shape)
    adv = np.where(np.arange(40) < 20, 1.0, -1.0) * raw[:, 0]
    batch = Batch(obs, raw, gaussian_log_prob(raw, mu, net.log_std), adv, np.zeros(40))

    # Vanilla policy gradient by central differences of -mean(A log pi).
    expected = []
    h = 1e-6
    for p in net.params():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = _vanilla_surrogate(net, batch)
            p[i] = old - h
            down = _vanilla_surrogate(net, batch)
            p[i] = old
            g[i] = (up - down) / (2 * h)
        expected.append(g)

    lr = 1e-6
    cfg = TrainConfig(clip=0.999, epochs=1, minibatch=40, lr=lr, optimizer="sgd",
                      max_grad_norm=0.0, value_coef=0.0)
    before = [p.copy() for p in net.params()]
    ppo_update(net, batch, cfg)
    step = np.concatenate([(b - a).ravel() for a, b in zip(net.params(), before)]) / lr
    ref = np.concatenate([g.ravel() for g in expected])
    cosine = step @ ref / (np.linalg.norm(step) * np.linalg.norm(ref))
    assert cosine > 1 - 1e-8
    assert np.allclose(step, ref, rtol=1e-4, atol=1e-8)


def test_non_finite_update_aborts():
    net = random_net(3)
    batch = random_batch(net)
    batch.advantages[0] = np.nan
    with pytest.raises(TrainingError):
        ppo_update(net, batch, TrainConfig(epochs=1))


def test_parameters_finite_after_updates():
    net = random_net(4, scale=0.3)
    batch = random_batch(net, n=128)
    ppo_update(net, batch, TrainConfig(epochs=3, minibatch=32))
    assert all(np.all(np.isfinite(p)) for p in net.params())


# -------------------------------------------------------- checkpoint/agents


def test_checkpoint_roundtrip(tmp_path):
    net = random_net(5, memory=2)
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), back.params()))
    assert np.array_equal(net.obs_offset, back.obs_offset)
    assert np.array_equal(net.obs_scale, back.obs_scale)
    assert path.read_bytes()[:8] == b"ATFGCKPT"


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_agents_emit_legal_actions():
    state = StackedState.empty(1)
    rng = np.random.default_rng(0)
    agent = PPOAgent(random_net(6, scale=5.0))
    for a in (agent.act(state), agent.act_stochastic(state, rng), RandomAgent(1).act(state)):
        assert a.shape == (4,) and np.all(np.abs(a) <= 1)


@pytest.mark.parametrize("kwargs", [{"clip": 0.0}, {"gamma": 1.5}, {"horizon": 100, "n_envs": 8},
                                    {"optimizer": "rmsprop"}, {"minibatch": 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# ---------------------------------------------------------------- training

TINY = TrainConfig(total_steps=1024, horizon=256, n_envs=4, epochs=2, minibatch=64, eval_every=2, eval_episodes=1)
SHORT_TASK = TaskConfig(episode_max=0.05)


def test_training_is_deterministic():
    omax = AircraftConfig().rotor_omega_max
    a = train(AttitudeEnv, SHORT_TASK, TINY, omax, seed=7)
    b = train(AttitudeEnv, SHORT_TASK, TINY, omax, seed=7)
    c = train(AttitudeEnv, SHORT_TASK, TINY, omax, seed=8)
    assert a.curve == b.curve and len(a.curve) > 0
    assert all(np.array_equal(x, y) for x, y in zip(a.final_net.params(), b.final_net.params()))
    assert a.curve != c.curve


def test_curve_has_one_entry_per_episode():
    result = train(AttitudeEnv, SHORT_TASK, TINY, AircraftConfig().rotor_omega_max, seed=0)
    # 1024 steps, 50-step episodes over 4 envs: 256 steps each -> 5 finished per env
    assert len(result.curve) == 4 * (256 // 50)
    assert result.updates[-1]["episodes"] == len(result.curve)


def _mean_episode_reward(agent, task, n=100):
    env = AttitudeEnv(task)
    totals = []
    for _ in range(n):
        res = env.reset()
        agent.reset()
        rewards = []
        while not res.done:
            res = env.step(agent.act(res.state))
            rewards.append(res.reward)
        totals.append(np.mean(rewards))
    return float(np.mean(totals))


def test_single_axis_task_beats_random_threefold():
    task = TaskConfig(active_axes=(True, False, False), seed=0)
    eval_task = TaskConfig(active_axes=(True, False, False), seed=1000)
    baseline = _mean_episode_reward(RandomAgent(0), eval_task)
    result = train(AttitudeEnv, task, TrainConfig(total_steps=200_000, seeds=1),
                   AircraftConfig().rotor_omega_max, seed=0)
    trained = _mean_episode_reward(result.agent, eval_task)
    assert baseline < -0.5
    assert trained * 3 >= baseline
