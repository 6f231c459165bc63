"""Clipped-surrogate policy optimization over patch rollouts.

Rollout steps carry a per-step guide flag: steps taken by a guide policy are
excluded from the surrogate and entropy terms (the learner never pretends it
chose them) but kept in the value regression, so the critic sees the full
return structure of mixed trajectories.

Gradients are composed analytically from the network backward passes; the
loss is a pure function of (params, batch, config) so finite differences can
check every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .nets import LOG_STD_MAX, LOG_STD_MIN, PolicyParams


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    value_coef: float = 1.0
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    lr: float = 3e-4
    n_envs: int = 64


def gae(rewards, values, dones, last_value, gamma: float = 0.99,
        lam: float = 0.95):
    """Generalized advantage estimates over a rollout.

    Accepts (T,) or (T, E) arrays; `dones[t]` marks that the episode ended
    at step t, cutting both the bootstrap and the propagation there.
    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards = rewards[:, None]
        values = values[:, None]
        dones = dones[:, None]
    last_value = np.broadcast_to(
        np.asarray(last_value, dtype=np.float64), rewards.shape[1:]).copy()

    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_adv = np.zeros(rewards.shape[1:])
    next_value = last_value
    for t in range(T - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterm - values[t]
        next_adv = delta + gamma * lam * nonterm * next_adv
        adv[t] = next_adv
        next_value = values[t]
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


def clipped_objective(ratio, adv, clip_eps: float):
    """Pessimistic clipped surrogate: min(rho*A, clip(rho, 1±eps)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv,
                      np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


class PatchBuffer:
    """Fixed-size (T, E) rollout storage with per-step guide flags."""

    def __init__(self, n_steps: int, n_envs: int, obs_dim: int, act_dim: int):
        self.n_steps = n_steps
        self.n_envs = n_envs
        self.obs = np.zeros((n_steps, n_envs, obs_dim))
        self.actions = np.zeros((n_steps, n_envs, act_dim))
        self.logp = np.zeros((n_steps, n_envs))
        self.values = np.zeros((n_steps, n_envs))
        self.rewards = np.zeros((n_steps, n_envs))
        self.dones = np.zeros((n_steps, n_envs))
        self.guide = np.zeros((n_steps, n_envs), dtype=bool)
        self.reasons = np.zeros((n_steps, n_envs), dtype=np.int64)
        self.bootstrap = np.zeros(n_envs)
        self.advantages = np.zeros((n_steps, n_envs))
        self.returns = np.zeros((n_steps, n_envs))
        self.ptr = 0

    @property
    def full(self) -> bool:
        return self.ptr >= self.n_steps

    def add(self, obs, action, logp, value, reward, done, guide, reason=0):
        if self.full:
            raise RuntimeError("buffer full")
        t = self.ptr
        self.obs[t] = obs
        self.actions[t] = action
        self.logp[t] = logp
        self.values[t] = value
        self.rewards[t] = reward
        self.dones[t] = done
        self.guide[t] = guide
        self.reasons[t] = reason
        self.ptr += 1

    def set_bootstrap(self, last_value):
        self.bootstrap = np.broadcast_to(
            np.asarray(last_value, dtype=np.float64), (self.n_envs,)).copy()

    def compute_advantages(self, gamma: float, lam: float):
        if not self.full:
            raise RuntimeError("buffer not full")
        self.advantages, self.returns = gae(
            self.rewards, self.values, self.dones, self.bootstrap, gamma, lam)

    def batch(self) -> dict:
        n = self.n_steps * self.n_envs
        return {
            "obs": self.obs.reshape(n, -1),
            "actions": self.actions.reshape(n, -1),
            "logp": self.logp.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
            "guide": self.guide.reshape(n),
        }

    def reset(self):
        self.ptr = 0


def ppo_loss(params: PolicyParams, batch: dict, cfg: PPOConfig):
    """Loss, diagnostics, and analytic parameter gradients for one batch."""
    obs = batch["obs"]
    actions = batch["actions"]
    old_logp = batch["logp"]
    adv = batch["advantages"]
    returns = batch["returns"]
    guide = batch["guide"]
    n = obs.shape[0]
    learner = ~guide
    nl = int(learner.sum())
    d = params.act_dim

    mean, a_cache = nets.forward_actor_cached(params, obs)
    log_std = np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    z = (actions - mean) / std
    logp = (-0.5 * np.sum(z * z, axis=1) - np.sum(log_std)
            - 0.5 * d * np.log(2 * np.pi))

    ratio = np.exp(logp - old_logp)
    obj_raw = ratio * adv
    obj_clip = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    use_raw = obj_raw <= obj_clip
    ent = float(np.sum(log_std) + 0.5 * d * (1.0 + np.log(2 * np.pi)))
    if nl > 0:
        surrogate = float(np.sum(np.minimum(obj_raw, obj_clip)[learner]) / nl)
        pi_loss = -surrogate
        ent_loss = -cfg.entropy_coef * ent
    else:
        surrogate = 0.0
        pi_loss = 0.0
        ent_loss = 0.0

    values, v_cache = nets.forward_critic_cached(params, obs)
    v_err = values - returns
    v_loss = float(np.mean(v_err ** 2))
    ret_var = float(np.var(returns))
    explained = 1.0 - float(np.var(v_err)) / ret_var if ret_var > 0 else 0.0
    loss = pi_loss + cfg.value_coef * v_loss + ent_loss

    # gradient w.r.t. logp: only learner steps on the unclipped branch
    dlogp = np.zeros(n)
    if nl > 0:
        active = learner & use_raw
        dlogp[active] = -(ratio * adv)[active] / nl
    dmean = dlogp[:, None] * (z / std)
    dls = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
    if nl > 0:
        dls = dls - cfg.entropy_coef
    dls = dls * ((params.log_std > LOG_STD_MIN)
                 & (params.log_std < LOG_STD_MAX))

    dv = cfg.value_coef * 2.0 * v_err / n
    a_dws, a_dbs = nets.actor_backward(params, a_cache, dmean)
    c_dws, c_dbs = nets.critic_backward(params, v_cache, dv)

    grads = []
    for w, b in zip(a_dws, a_dbs):
        grads.extend((w, b))
    grads.append(dls)
    for w, b in zip(c_dws, c_dbs):
        grads.extend((w, b))

    if nl > 0:
        approx_kl = float(np.mean((old_logp - logp)[learner]))
        clip_frac = float(np.mean(
            (np.abs(ratio - 1.0) > cfg.clip_eps)[learner]))
    else:
        approx_kl = 0.0
        clip_frac = 0.0
    stats = {
        "loss": float(loss),
        "surrogate": surrogate,
        "value_loss": v_loss,
        "entropy": ent,
        "approx_kl": approx_kl,
        "clip_frac": clip_frac,
        "explained_var": explained,
        "n_learner": nl,
        "n_steps": n,
    }
    return stats, grads


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def update(params: PolicyParams, opt, buf: PatchBuffer, cfg: PPOConfig,
           rng: np.random.Generator):
    """Run the epoch/minibatch schedule; returns (params, opt, mean stats)."""
    buf.compute_advantages(cfg.gamma, cfg.lam)
    batch = buf.batch()
    n = batch["obs"].shape[0]
    work = dict(batch)
    work["advantages"] = normalize_advantages(batch["advantages"])

    agg: dict = {}
    count = 0
    skipped = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for chunk in np.array_split(order, cfg.minibatches):
            mb = {k: v[chunk] for k, v in work.items()}
            stats, grads = ppo_loss(params, mb, cfg)
            if not np.isfinite(stats["loss"]):
                skipped += 1
                continue
            stats["grad_norm"] = nets.global_grad_norm(grads)
            grads = nets.clip_grads(grads, cfg.max_grad_norm)
            params, opt = nets.opt_step(params, grads, opt)
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in agg.items()} if count else {}
    out["skipped_minibatches"] = skipped
    return params, opt, out
