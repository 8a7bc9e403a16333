"""Actor-critic learner: tanh MLPs, diagonal Gaussian policy, GAE and clipped PPO.

Networks and their gradients are written out by hand in numpy. Parameters
live in :class:`PolicyParams`, which also serves as the container for
gradients and Adam moments so they can be updated array by array.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import TrainConfig

CHECKPOINT_VERSION = 1
LOG2PI = math.log(2.0 * math.pi)


# -- networks -------------------------------------------------------------


def init_mlp(rng: np.random.Generator, sizes, out_gain: float = 1.0, dtype=np.float64):
    """Orthogonal weights (gain sqrt(2) hidden, ``out_gain`` last), zero biases."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
        a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
        qm, r = np.linalg.qr(a)
        qm = qm * np.sign(np.diag(r))
        w = qm if n_in >= n_out else qm.T
        layers.append([(gain * w[:n_in, :n_out]).astype(dtype), np.zeros(n_out, dtype=dtype)])
    return layers


def mlp_forward(layers, x):
    """tanh hidden layers, linear output. Returns ``(out, cache)``."""
    h = x
    cache = [x]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        if h.shape[-1] != w.shape[0]:
            raise ValueError(f"layer {i} expects {w.shape[0]} inputs, got {h.shape[-1]}")
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        cache.append(h)
    return h, cache


def mlp_backward(layers, cache, dout):
    """Gradients ``[[dW, db], ...]`` of a scalar whose output gradient is ``dout``."""
    grads = [None] * len(layers)
    g = dout
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = [cache[i].T @ g, g.sum(axis=0)]
        if i > 0:
            g = (g @ w.T) * (1.0 - cache[i] ** 2)
    return grads


@dataclass
class PolicyParams:
    actor: list
    log_std: np.ndarray
    critic: list

    def arrays(self) -> list[np.ndarray]:
        out = [a for layer in self.actor for a in layer]
        out.append(self.log_std)
        out += [a for layer in self.critic for a in layer]
        return out

    def names(self) -> list[str]:
        out = [f"actor.{i}.{k}" for i in range(len(self.actor)) for k in ("W", "b")]
        out.append("log_std")
        out += [f"critic.{i}.{k}" for i in range(len(self.critic)) for k in ("W", "b")]
        return out

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(
            [[np.zeros_like(w), np.zeros_like(b)] for w, b in self.actor],
            np.zeros_like(self.log_std),
            [[np.zeros_like(w), np.zeros_like(b)] for w, b in self.critic],
        )

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            [[w.copy(), b.copy()] for w, b in self.actor],
            self.log_std.copy(),
            [[w.copy(), b.copy()] for w, b in self.critic],
        )

    @property
    def obs_dim(self) -> int:
        return self.actor[0][0].shape[0]

    @property
    def act_dim(self) -> int:
        return self.log_std.shape[0]

    @property
    def hidden(self) -> list[int]:
        return [w.shape[1] for w, _ in self.actor[:-1]]


def init_policy(rng, obs_dim, act_dim, hidden=(256, 128), init_log_std=0.0, dtype=np.float64) -> PolicyParams:
    actor = init_mlp(rng, [obs_dim, *hidden, act_dim], out_gain=0.01, dtype=dtype)
    critic = init_mlp(rng, [obs_dim, *hidden, 1], out_gain=1.0, dtype=dtype)
    return PolicyParams(actor, np.full(act_dim, init_log_std, dtype=dtype), critic)


def policy_mean(params: PolicyParams, obs):
    return mlp_forward(params.actor, obs)[0]


def value(params: PolicyParams, obs):
    return mlp_forward(params.critic, obs)[0][:, 0]


def gaussian_log_prob(mean, log_std, actions):
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG2PI


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std) + 0.5 * log_std.shape[-1] * (1.0 + LOG2PI))


def gaussian_policy_sample(params: PolicyParams, obs, rng: np.random.Generator):
    mean = policy_mean(params, obs)
    noise = rng.standard_normal(mean.shape).astype(mean.dtype)
    actions = mean + np.exp(params.log_std) * noise
    return actions, gaussian_log_prob(mean, params.log_std, actions)


# -- advantage estimation -----------------------------------------------------


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """GAE over a ``(T, n)`` rollout. ``dones[t]`` ends the episode after step ``t``.

    ``last_values`` bootstraps the tail of episodes still running after the
    last step. Returns ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - np.asarray(dones, dtype=float)
    adv = np.zeros_like(rewards)
    next_v = np.asarray(last_values, dtype=float)
    run = np.zeros_like(next_v)
    for t in range(rewards.shape[0] - 1, -1, -1):
        delta = rewards[t] + gamma * next_v * not_done[t] - values[t]
        run = delta + gamma * lam * not_done[t] * run
        adv[t] = run
        next_v = values[t]
    return adv, adv + values


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    m: PolicyParams
    v: PolicyParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: PolicyParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def adam_step(opt: AdamState, params: PolicyParams, grads: PolicyParams, lr: float) -> PolicyParams:
    """In-place bias-corrected Adam update; returns ``params``."""
    opt.t += 1
    c1 = 1.0 - opt.beta1**opt.t
    c2 = 1.0 - opt.beta2**opt.t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), opt.m.arrays(), opt.v.arrays()):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)).astype(p.dtype)
    return params


def global_norm(grads: PolicyParams) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.arrays()))


# -- losses -------------------------------------------------------------------


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.log_probs[idx], self.advantages[idx], self.returns[idx])


def ppo_loss_and_grads(params: PolicyParams, batch: Batch, clip: float, entropy_coef: float, value_coef: float):
    """Clipped surrogate + value loss - entropy bonus, and its exact gradient.

    ``clip = inf`` turns the surrogate into the plain policy-gradient loss
    ``-mean(ratio * A)``.
    """
    n = len(batch)
    mean, a_cache = mlp_forward(params.actor, batch.obs)
    v, c_cache = mlp_forward(params.critic, batch.obs)
    v = v[:, 0]
    inv_std = np.exp(-params.log_std)
    z = (batch.actions - mean) * inv_std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(params.log_std) - 0.5 * mean.shape[1] * LOG2PI
    log_ratio = logp - batch.log_probs
    ratio = np.exp(log_ratio)
    adv = batch.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    # gradient flows only through samples whose unclipped term is the minimum
    active = ~(((adv > 0) & (ratio > 1.0 + clip)) | ((adv < 0) & (ratio < 1.0 - clip)))
    dlogp = -(adv * ratio * active) / n

    value_loss = value_coef * np.mean((v - batch.returns) ** 2)
    entropy = gaussian_entropy(params.log_std)

    dmean = dlogp[:, None] * z * inv_std
    dlog_std = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0) - entropy_coef
    dv = (2.0 * value_coef / n) * (v - batch.returns)

    grads = PolicyParams(
        mlp_backward(params.actor, a_cache, dmean),
        dlog_std.astype(params.log_std.dtype),
        mlp_backward(params.critic, c_cache, dv[:, None]),
    )
    loss = policy_loss + value_loss - entropy_coef * entropy
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        # low-variance estimator of KL(old || new), non-negative per sample
        "kl": float(np.mean((ratio - 1.0) - log_ratio)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip)),
    }
    return stats, grads


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient during an update."""


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(
    params: PolicyParams,
    opt: AdamState,
    batch: Batch,
    cfg: TrainConfig,
    rng: np.random.Generator,
    lr: float | None = None,
):
    """Epochs of shuffled minibatch Adam steps on the clipped PPO loss.

    Advantages are normalized once over the whole batch. Returns
    ``(params, stats, lr)``; with the adaptive schedule the learning rate is
    adjusted after each minibatch from the measured KL.
    """
    lr = cfg.learning_rate if lr is None else lr
    batch = Batch(batch.obs, batch.actions, batch.log_probs, normalize_advantages(batch.advantages), batch.returns)
    n = len(batch)
    mb = max(1, n // cfg.minibatches)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for k in range(cfg.minibatches):
            idx = perm[k * mb : (k + 1) * mb] if k < cfg.minibatches - 1 else perm[k * mb :]
            if len(idx) == 0:
                continue
            stats, grads = ppo_loss_and_grads(
                params, batch.take(idx), cfg.clip, cfg.entropy_coef, cfg.value_coef
            )
            gn = global_norm(grads)
            if not (math.isfinite(stats["loss"]) and math.isfinite(gn)):
                raise DivergenceError("non-finite loss or gradient in PPO update")
            if cfg.max_grad_norm > 0 and gn > cfg.max_grad_norm:
                scale = cfg.max_grad_norm / gn
                for g in grads.arrays():
                    g *= scale
            if cfg.schedule == "adaptive":
                if stats["kl"] > 2.0 * cfg.desired_kl:
                    lr = max(1e-5, lr / 1.5)
                elif stats["kl"] < 0.5 * cfg.desired_kl:
                    lr = min(1e-2, lr * 1.5)
            adam_step(opt, params, grads, lr)
            for key, val in stats.items():
                totals[key] = totals.get(key, 0.0) + val
            count += 1
    out = {k: v / max(count, 1) for k, v in totals.items()}
    return params, out, lr


# -- observation normalization ---------------------------------------------


@dataclass
class RunningNormalizer:
    """Running mean/variance (parallel merge) with clipped standardization."""

    mean: np.ndarray
    var: np.ndarray
    count: float = 1e-4
    clip: float = 10.0

    @classmethod
    def create(cls, dim: int) -> "RunningNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        b_mean = x.mean(axis=0)
        b_var = x.var(axis=0)
        b_n = x.shape[0]
        tot = self.count + b_n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * b_n / tot
        m2 = self.var * self.count + b_var * b_n + delta**2 * self.count * b_n / tot
        self.var = m2 / tot
        self.count = tot

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)


class IdentityNormalizer:
    def update(self, x):
        pass

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64)


# -- checkpoints ------------------------------------------------------------


@dataclass
class Policy:
    """Trained policy: parameters, observation normalizer and metadata."""

    params: PolicyParams
    normalizer: RunningNormalizer | IdentityNormalizer
    variant: str = "3d"
    config_hash: str = ""

    @property
    def dims(self) -> tuple[int, int]:
        return self.params.obs_dim, self.params.act_dim

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        x = self.normalizer(np.atleast_2d(obs)).astype(self.params.log_std.dtype)
        return policy_mean(self.params, x).astype(np.float64)

    __call__ = mean_action


def save_checkpoint(path, policy: Policy) -> None:
    """``.npz`` with one array per tensor plus normalizer and metadata.

    Keys: ``version``, ``variant``, ``config_hash``, ``hidden``,
    ``actor.{i}.W``/``actor.{i}.b``, ``log_std``, ``critic.{i}.W``/``critic.{i}.b``,
    and ``norm.mean``/``norm.var``/``norm.count`` when normalization is on.
    """
    p = policy.params
    data = {name: arr for name, arr in zip(p.names(), p.arrays())}
    data["version"] = np.array(CHECKPOINT_VERSION)
    data["variant"] = np.array(policy.variant)
    data["config_hash"] = np.array(policy.config_hash)
    data["hidden"] = np.array(p.hidden)
    if isinstance(policy.normalizer, RunningNormalizer):
        data["norm.mean"] = policy.normalizer.mean
        data["norm.var"] = policy.normalizer.var
        data["norm.count"] = np.array(policy.normalizer.count)
    buf = io.BytesIO()
    np.savez(buf, **data)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Policy:
    with np.load(path, allow_pickle=False) as f:
        if "version" not in f or int(f["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        n_layers = len(f["hidden"]) + 1
        actor = [[f[f"actor.{i}.W"], f[f"actor.{i}.b"]] for i in range(n_layers)]
        critic = [[f[f"critic.{i}.W"], f[f"critic.{i}.b"]] for i in range(n_layers)]
        params = PolicyParams(actor, f["log_std"], critic)
        if "norm.mean" in f:
            norm = RunningNormalizer(f["norm.mean"], f["norm.var"], float(f["norm.count"]))
        else:
            norm = IdentityNormalizer()
        return Policy(params, norm, str(f["variant"]), str(f["config_hash"]))


# -- training loop ------------------------------------------------------------

LOG_COLUMNS = (
    "iteration",
    "env_steps",
    "experience_s",
    "mean_reward",
    "episodes",
    "mean_return",
    "mean_length",
    "landing_rate",
    "mean_landing_error",
    "collided",
    "limits",
    "timeout",
    "policy_loss",
    "value_loss",
    "entropy",
    "kl",
    "clip_frac",
    "learning_rate",
    "mean_std",
)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class TrainResult:
    policy: Policy
    log: list = field(default_factory=list)


def train(
    env,
    cfg: TrainConfig,
    seed: int = 0,
    config_hash: str = "",
    log_path=None,
    checkpoint_dir=None,
    callback: Callable | None = None,
) -> TrainResult:
    """Alternate rollouts of ``cfg.steps_per_iter`` control steps and PPO updates.

    ``env`` is a batched environment exposing ``reset()``, ``step(actions)``,
    ``obs_dim``, ``act_dim``, ``variant``, ``n`` and ``cfg.dt``/``cfg.decimation``.
    Episodes cut by the time limit are bootstrapped with the value of their
    final observation. The log has one row per iteration (columns
    :data:`LOG_COLUMNS`), written to ``log_path`` as it grows.
    """
    cfg.validate()
    dtype = np.dtype(cfg.dtype)
    ss = np.random.SeedSequence(seed)
    init_ss, act_ss, upd_ss = ss.spawn(3)
    params = init_policy(
        np.random.default_rng(init_ss), env.obs_dim, env.act_dim, cfg.hidden, cfg.init_log_std, dtype
    )
    norm = RunningNormalizer.create(env.obs_dim) if cfg.obs_normalization else IdentityNormalizer()
    policy = Policy(params, norm, env.variant, config_hash)
    opt = AdamState.for_params(params)
    act_rng = np.random.default_rng(act_ss)
    upd_rng = np.random.default_rng(upd_ss)
    lr = cfg.learning_rate
    n, steps = env.n, cfg.steps_per_iter
    step_s = env.cfg.dt * env.cfg.decimation
    result = TrainResult(policy)
    log_file = None
    writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    obs = env.reset() if cfg.iterations > 0 else None
    try:
        for it in range(cfg.iterations):
            b_obs = np.zeros((steps, n, env.obs_dim), dtype=dtype)
            b_act = np.zeros((steps, n, env.act_dim), dtype=dtype)
            b_logp = np.zeros((steps, n))
            b_rew = np.zeros((steps, n))
            b_val = np.zeros((steps, n))
            b_done = np.zeros((steps, n), dtype=bool)
            ep_returns, ep_lengths, outcomes, errors = [], [], [], []
            for t in range(steps):
                norm.update(obs)
                x = norm(obs).astype(dtype)
                act, logp = gaussian_policy_sample(params, x, act_rng)
                b_obs[t], b_act[t], b_logp[t] = x, act, logp
                b_val[t] = value(params, x)
                obs, rew, done, info = env.step(act.astype(np.float64))
                rew = rew.astype(np.float64)
                if done.any():
                    idx = np.flatnonzero(done)
                    cut = info["timeout"][idx]
                    if cut.any():
                        tx = norm(info["terminal_obs"][cut]).astype(dtype)
                        rew[idx[cut]] += cfg.gamma * value(params, tx)
                    ep_returns.append(info["episode_return"][idx])
                    ep_lengths.append(info["episode_length"][idx])
                    outcomes.append(info["outcome"][idx])
                    errors.append(info["landing_error"][idx])
                b_rew[t], b_done[t] = rew, done
            last_v = value(params, norm(obs).astype(dtype))
            adv, ret = compute_gae(b_rew, b_val, b_done, last_v, cfg.gamma, cfg.lam)
            batch = Batch(
                b_obs.reshape(steps * n, -1),
                b_act.reshape(steps * n, -1),
                b_logp.reshape(-1).astype(dtype),
                adv.reshape(-1).astype(dtype),
                ret.reshape(-1).astype(dtype),
            )
            params, stats, lr = ppo_update(params, opt, batch, cfg, upd_rng, lr)

            cat = lambda xs, d=float: np.concatenate(xs) if xs else np.zeros(0, dtype=d)
            oc = cat(outcomes, int)
            errs = cat(errors)
            n_ep = len(oc)
            landed = np.isfinite(errs)
            row = {
                "iteration": it,
                "env_steps": (it + 1) * steps * n,
                "experience_s": (it + 1) * steps * n * step_s,
                "mean_reward": float(b_rew.mean()),
                "episodes": n_ep,
                "mean_return": float(cat(ep_returns).mean()) if n_ep else float("nan"),
                "mean_length": float(cat(ep_lengths, int).mean()) if n_ep else float("nan"),
                "landing_rate": float(landed.mean()) if n_ep else float("nan"),
                "mean_landing_error": float(errs[landed].mean()) if landed.any() else float("nan"),
                "collided": int(np.sum(oc == 1)),
                "limits": int(np.sum(oc == 2)),
                "timeout": int(np.sum(oc == 4)),
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "entropy": stats["entropy"],
                "kl": stats["kl"],
                "clip_frac": stats["clip_frac"],
                "learning_rate": lr,
                "mean_std": float(np.exp(params.log_std).mean()),
            }
            result.log.append(row)
            if writer is not None:
                writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
                log_file.flush()
            if checkpoint_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"checkpoint_{it + 1:05d}.npz", policy)
            if callback is not None:
                callback(row, policy)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "checkpoint.npz", policy)
    return result
