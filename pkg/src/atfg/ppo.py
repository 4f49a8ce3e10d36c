"""PPO-clip trainer with hand-written backpropagation.

Policy: tanh MLP producing the pre-squash mean of a diagonal Gaussian with
a learned state-independent log-std; actions are ``tanh`` of the sample.
Value: a separate tanh MLP. Everything is float64 numpy.
"""
from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from atfg.env import AttitudeEnv, TaskConfig
from atfg.sensors import OBS_SIZE

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
N_ACTIONS = 4


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 1_000_000
    horizon: int = 2048
    minibatch: int = 64
    epochs: int = 10
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    seeds: int = 3
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)
    n_envs: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    init_log_std: float = -0.5
    optimizer: str = "adam"
    anneal_lr: bool = True
    eval_every: int = 10
    eval_episodes: int = 5

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must lie in (0, 1]")
        for key in ("total_steps", "horizon", "minibatch", "epochs", "seeds", "n_envs", "eval_every"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if self.horizon % self.n_envs:
            raise ValueError("horizon must be a multiple of n_envs")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


class TrainingError(RuntimeError):
    """Raised when an update produces a non-finite loss or gradient."""


# ---------------------------------------------------------------- networks


def _init_mlp(rng, sizes, out_gain):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
        a = rng.standard_normal((n_out, n_in))
        q, r = np.linalg.qr(a.T if n_in > n_out else a)
        q = q * np.sign(np.diag(r))
        w = np.ascontiguousarray((q.T if n_in > n_out else q)[:n_out, :n_in] * gain)
        layers.append([w, np.zeros(n_out)])
    return layers


def _mlp_forward(layers, x):
    """Forward a batch ``x`` of shape (B, n_in); returns output and hidden activations."""
    hs = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.tanh(h @ w.T + b)
        hs.append(h)
    w, b = layers[-1]
    return h @ w.T + b, hs


def _mlp_backward(layers, hs, dout):
    grads = [None] * len(layers)
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = [delta.T @ hs[i], delta.sum(axis=0)]
        if i:
            delta = (delta @ w) * (1.0 - hs[i] * hs[i])
    return grads


@dataclass
class PolicyNet:
    """Policy and value networks plus the fixed input normalization."""

    pi: list
    log_std: np.ndarray
    vf: list
    obs_offset: np.ndarray
    obs_scale: np.ndarray

    @property
    def input_size(self) -> int:
        return self.pi[0][0].shape[1]

    def params(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (views, updated in place)."""
        out = [a for layer in self.pi for a in layer]
        out.append(self.log_std)
        out.extend(a for layer in self.vf for a in layer)
        return out

    def copy(self) -> "PolicyNet":
        return PolicyNet(
            pi=[[w.copy(), b.copy()] for w, b in self.pi],
            log_std=self.log_std.copy(),
            vf=[[w.copy(), b.copy()] for w, b in self.vf],
            obs_offset=self.obs_offset.copy(),
            obs_scale=self.obs_scale.copy(),
        )

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.obs_offset) / self.obs_scale


def init_policy(rng, memory: int = 1, hidden=(32, 32), obs_offset=None, obs_scale=None,
                init_log_std: float = -0.5) -> PolicyNet:
    n_in = memory * OBS_SIZE
    sizes = (n_in, *hidden)
    return PolicyNet(
        pi=_init_mlp(rng, (*sizes, N_ACTIONS), 0.01),
        log_std=np.full(N_ACTIONS, float(init_log_std)),
        vf=_init_mlp(rng, (*sizes, 1), 1.0),
        obs_offset=np.zeros(n_in) if obs_offset is None else np.asarray(obs_offset, float),
        obs_scale=np.ones(n_in) if obs_scale is None else np.asarray(obs_scale, float),
    )


def observation_normalizer(task: TaskConfig, rotor_omega_max: float):
    """Offsets/scales that bring rate errors and rotor speeds to O(1)."""
    err_scale = task.reward_scale
    half = 0.5 * rotor_omega_max
    offset = np.tile([0.0, 0.0, 0.0, half, half, half, half], task.memory)
    scale = np.tile([err_scale] * 3 + [half] * 4, task.memory)
    return offset, scale


def forward(net: PolicyNet, state):
    """Deterministic action mean in [-1, 1]^4 and state value.

    Accepts one flat state or a (B, n) batch.
    """
    x = np.asarray(state, dtype=float)
    single = x.ndim == 1
    if x.shape[-1] != net.input_size:
        raise ValueError(f"expected input of length {net.input_size}, got {x.shape[-1]}")
    x = net.normalize(np.atleast_2d(x))
    mu, _ = _mlp_forward(net.pi, x)
    v, _ = _mlp_forward(net.vf, x)
    mean, value = np.tanh(mu), v[:, 0]
    return (mean[0], float(value[0])) if single else (mean, value)


def gaussian_log_prob(u, mu, log_std):
    z = (u - mu) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * u.shape[-1] * LOG_2PI


def squash_correction(u):
    """log|det d tanh(u)/du|, stable form."""
    return np.sum(2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


# --------------------------------------------------------------- advantages


def gae(rewards, values, dones, gamma: float, lam: float, normalize: bool = True):
    """Generalized advantage estimates and value targets.

    ``values`` has one more entry than ``rewards``: the bootstrap value of
    the state after the last step. ``dones[t]`` marks that step ``t`` ended
    an episode, cutting both the bootstrap and the recursion.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    n = len(rewards)
    if n == 0:
        raise ValueError("empty batch")
    if len(values) != n + 1 or len(dones) != n:
        raise ValueError("need len(values) == len(rewards) + 1 == len(dones) + 1")
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    returns = adv + values[:n]
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


# ------------------------------------------------------------------- losses


@dataclass
class Batch:
    obs: np.ndarray
    raw_actions: np.ndarray
    logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def take(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.raw_actions[idx], self.logp[idx], self.advantages[idx], self.returns[idx])


def loss_and_grads(net: PolicyNet, batch: Batch, cfg: TrainConfig, with_grads: bool = True):
    """Clipped surrogate + value loss - entropy bonus, with analytic gradients."""
    x = net.normalize(batch.obs)
    n = len(batch)
    mu, pi_hs = _mlp_forward(net.pi, x)
    v, vf_hs = _mlp_forward(net.vf, x)
    v = v[:, 0]
    std = np.exp(net.log_std)
    z = (batch.raw_actions - mu) / std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(net.log_std) - 0.5 * N_ACTIONS * LOG_2PI
    ratio = np.exp(logp - batch.logp)
    adv = batch.advantages
    surr1 = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surr2 = clipped * adv
    pi_loss = -np.mean(np.minimum(surr1, surr2))
    v_err = v - batch.returns
    v_loss = np.mean(v_err * v_err)
    entropy = float(np.sum(net.log_std) + 0.5 * N_ACTIONS * (1.0 + LOG_2PI))
    loss = pi_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy
    stats = {
        "loss": float(loss),
        "policy_loss": float(pi_loss),
        "value_loss": float(v_loss),
        "entropy": entropy,
        "approx_kl": float(np.mean(batch.logp - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
    }
    if not with_grads:
        return loss, None, stats

    # Gradient flows through surr1 unless the clipped branch is the active minimum.
    active = (surr1 <= surr2) | (ratio == clipped)
    dlogp = np.where(active, -adv * ratio / n, 0.0)
    dmu = dlogp[:, None] * z / std
    dlog_std = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0) - cfg.entropy_coef
    g_pi = _mlp_backward(net.pi, pi_hs, dmu)
    dv = (cfg.value_coef * 2.0 / n) * v_err
    g_vf = _mlp_backward(net.vf, vf_hs, dv[:, None])
    grads = [a for layer in g_pi for a in layer]
    grads.append(dlog_std)
    grads.extend(a for layer in g_vf for a in layer)
    return loss, grads, stats


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-5):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def make_optimizer(net: PolicyNet, cfg: TrainConfig):
    return Adam(net.params(), cfg.lr) if cfg.optimizer == "adam" else SGD(net.params(), cfg.lr)


def ppo_update(net: PolicyNet, batch: Batch, cfg: TrainConfig, optimizer=None, rng=None):
    """Run ``cfg.epochs`` passes of minibatch descent on ``batch``; mutates ``net``."""
    optimizer = optimizer or make_optimizer(net, cfg)
    rng = rng or np.random.default_rng(0)
    params = net.params()
    n = len(batch)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = batch.take(order[start:start + cfg.minibatch])
            loss, grads, stats = loss_and_grads(net, mb, cfg)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if not (math.isfinite(loss) and math.isfinite(norm)):
                raise TrainingError(f"non-finite update: loss={loss!r} grad_norm={norm!r} stats={stats}")
            if cfg.max_grad_norm and norm > cfg.max_grad_norm:
                scale = cfg.max_grad_norm / (norm + 1e-6)
                grads = [g * scale for g in grads]
            optimizer.step(params, grads)
            stats["grad_norm"] = norm
            history.append(stats)
    summary = {key: float(np.mean([h[key] for h in history])) for key in history[0]}
    return net, summary


# ------------------------------------------------------------------- agents


class PPOAgent:
    """Agent-interface wrapper; deterministic ``act`` is tanh of the policy mean."""

    def __init__(self, net: PolicyNet):
        self.net = net

    def reset(self) -> None:
        pass

    def act(self, stacked) -> np.ndarray:
        return forward(self.net, stacked.flat)[0]

    def act_stochastic(self, stacked, rng) -> np.ndarray:
        x = self.net.normalize(np.atleast_2d(stacked.flat))
        mu, _ = _mlp_forward(self.net.pi, x)
        u = mu[0] + np.exp(self.net.log_std) * rng.standard_normal(N_ACTIONS)
        return np.tanh(u)


class RandomAgent:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self) -> None:
        pass

    def act(self, stacked) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, N_ACTIONS)


# --------------------------------------------------------------- checkpoint

CKPT_MAGIC = b"ATFGCKPT"
CKPT_VERSION = 1


def _named_tensors(net: PolicyNet):
    out = []
    for i, (w, b) in enumerate(net.pi):
        out += [(f"pi.{i}.w", w), (f"pi.{i}.b", b)]
    out.append(("pi.log_std", net.log_std))
    for i, (w, b) in enumerate(net.vf):
        out += [(f"vf.{i}.w", w), (f"vf.{i}.b", b)]
    out += [("obs.offset", net.obs_offset), ("obs.scale", net.obs_scale)]
    return out


def save_checkpoint(net: PolicyNet, path) -> None:
    """Header, tensor names and shapes, then little-endian float64 data."""
    tensors = _named_tensors(net)
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(tensors)))
    for name, arr in tensors:
        encoded = name.encode("ascii")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for _, arr in tensors:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> PolicyNet:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    specs = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4:pos + 4 + length].decode("ascii")
        pos += 4 + length
        (ndim,) = struct.unpack_from("<I", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        specs.append((name, shape))
    tensors = {}
    for name, shape in specs:
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(float)
        pos += 8 * size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    n_pi = sum(1 for k in tensors if k.startswith("pi.") and k.endswith(".w"))
    n_vf = sum(1 for k in tensors if k.startswith("vf.") and k.endswith(".w"))
    return PolicyNet(
        pi=[[tensors[f"pi.{i}.w"], tensors[f"pi.{i}.b"]] for i in range(n_pi)],
        log_std=tensors["pi.log_std"],
        vf=[[tensors[f"vf.{i}.w"], tensors[f"vf.{i}.b"]] for i in range(n_vf)],
        obs_offset=tensors["obs.offset"],
        obs_scale=tensors["obs.scale"],
    )


# ----------------------------------------------------------------- training


@dataclass
class TrainResult:
    agent: PPOAgent
    final_net: PolicyNet
    curve: list[float] = field(default_factory=list)
    best_score: float = -math.inf
    updates: list[dict] = field(default_factory=list)


def validation_score(net: PolicyNet, env_factory, task: TaskConfig, episodes: int, seed: int) -> float:
    """Mean per-step reward of the deterministic policy on a fixed setpoint stream."""
    env = env_factory(replace(task, seed=seed))
    total = 0.0
    steps = 0
    for _ in range(episodes):
        res = env.reset()
        while not res.done:
            action, _ = forward(net, res.state.flat)
            res = env.step(action)
            total += res.reward
            steps += 1
    return total / max(steps, 1)


def _streams(seed: int):
    """Independent init, sampling, shuffling and environment seed streams."""
    return np.random.SeedSequence(seed).spawn(4)


def initial_policy(task: TaskConfig, cfg: TrainConfig, rotor_omega_max: float, seed: int) -> PolicyNet:
    """The untrained network that ``train`` starts from for this seed."""
    offset, scale = observation_normalizer(task, rotor_omega_max)
    rng = np.random.default_rng(_streams(seed)[0])
    return init_policy(rng, task.memory, cfg.hidden, offset, scale, cfg.init_log_std)


def train(env_factory, task: TaskConfig, cfg: TrainConfig, rotor_omega_max: float, seed: int | None = None,
          progress=None) -> TrainResult:
    """Collect rollouts from ``cfg.n_envs`` environments and run PPO updates.

    ``env_factory(task)`` must return a fresh environment. Every random
    stream (init, sampling, shuffling, setpoints) derives from ``seed``.
    """
    seed = cfg.seed if seed is None else seed
    init_ss, sample_ss, shuffle_ss, env_ss = _streams(seed)
    net = initial_policy(task, cfg, rotor_omega_max, seed)
    optimizer = make_optimizer(net, cfg)
    sample_rng = np.random.default_rng(sample_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    env_seeds = env_ss.generate_state(cfg.n_envs)
    envs = [env_factory(replace(task, seed=int(s))) for s in env_seeds]
    states = [e.reset().state for e in envs]
    ep_reward = [0.0] * cfg.n_envs
    ep_len = [0] * cfg.n_envs
    # A budget below one horizon shrinks the batch instead of overrunning.
    horizon = min(cfg.horizon, max(cfg.n_envs, cfg.total_steps - cfg.total_steps % cfg.n_envs))
    per_env = horizon // cfg.n_envs
    n_updates = max(1, cfg.total_steps // horizon)
    result = TrainResult(agent=PPOAgent(net.copy()), final_net=net)
    best_net = net.copy()

    for update in range(n_updates):
        if cfg.anneal_lr:
            optimizer.lr = cfg.lr * (1.0 - update / n_updates)
        obs = np.zeros((per_env, cfg.n_envs, net.input_size))
        raw = np.zeros((per_env, cfg.n_envs, N_ACTIONS))
        logps = np.zeros((per_env, cfg.n_envs))
        rewards = np.zeros((per_env, cfg.n_envs))
        dones = np.zeros((per_env, cfg.n_envs))
        values = np.zeros((per_env + 1, cfg.n_envs))
        std = np.exp(net.log_std)
        for t in range(per_env):
            x = np.stack([s.flat for s in states])
            xn = net.normalize(x)
            mu, _ = _mlp_forward(net.pi, xn)
            v, _ = _mlp_forward(net.vf, xn)
            u = mu + std * sample_rng.standard_normal(mu.shape)
            obs[t], raw[t], values[t] = x, u, v[:, 0]
            logps[t] = gaussian_log_prob(u, mu, net.log_std)
            actions = np.tanh(u)
            for i, env in enumerate(envs):
                res = env.step(actions[i])
                rewards[t, i] = res.reward
                ep_reward[i] += res.reward
                ep_len[i] += 1
                if res.done:
                    dones[t, i] = 1.0
                    result.curve.append(ep_reward[i] / ep_len[i])
                    ep_reward[i], ep_len[i] = 0.0, 0
                    res = env.reset()
                states[i] = res.state
        x = np.stack([s.flat for s in states])
        v, _ = _mlp_forward(net.vf, net.normalize(x))
        values[per_env] = v[:, 0]

        advs, rets = [], []
        for i in range(cfg.n_envs):
            a, r = gae(rewards[:, i], values[:, i], dones[:, i], cfg.gamma, cfg.lam, normalize=False)
            advs.append(a)
            rets.append(r)
        adv = np.stack(advs, axis=1).reshape(-1)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch = Batch(
            obs=obs.reshape(-1, net.input_size),
            raw_actions=raw.reshape(-1, N_ACTIONS),
            logp=logps.reshape(-1),
            advantages=adv,
            returns=np.stack(rets, axis=1).reshape(-1),
        )
        _, stats = ppo_update(net, batch, cfg, optimizer, shuffle_rng)
        stats["update"] = update
        stats["episodes"] = len(result.curve)
        result.updates.append(stats)

        if (update + 1) % cfg.eval_every == 0 or update == n_updates - 1:
            score = validation_score(net, env_factory, task, cfg.eval_episodes, seed + 2000)
            stats["validation"] = score
            if score > result.best_score:
                result.best_score = score
                best_net = net.copy()
        if progress is not None:
            progress(stats)
        log.debug("update %d: %s", update, stats)

    result.agent = PPOAgent(best_net)
    return result
