"""Rollout collection and the PPO training loop."""

from __future__ import annotations

import collections
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import kernels as K
from .control import ControlConfig
from .env import VecEnv
from .gait import GaitConfig
from .plant import PlantParams, ScenarioSpec
from .ppo import (ActionBounds, Adam, Batch, Checkpoint, PolicyParams, TrainConfig, gaussian_logp, linear_lr,
                  policy_forward, ppo_update)
from .symmetry import MirrorSpec, SharedNormStats, augment_arrays, mirror_state, update_shared_norm


@dataclass
class Agent:
    params: PolicyParams
    stats: SharedNormStats
    bounds: ActionBounds

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Agent":
        return cls(ckpt.params, ckpt.stats, ckpt.bounds)

    def deterministic(self, obs: np.ndarray) -> np.ndarray:
        mu, _, _ = policy_forward(self.params, self.stats.normalize(np.atleast_2d(obs)))
        return self.bounds.squash(mu)

    __call__ = deterministic


@dataclass
class TrainResult:
    agent: Agent
    curve: list = field(default_factory=list)  # (env steps, rolling mean duration s)
    episodes: int = 0
    wall_time: float = 0.0
    updates: list = field(default_factory=list)


def collect(env: VecEnv, agent: Agent, n_steps: int, obs: np.ndarray, rng: np.random.Generator,
            durations: collections.deque):
    """Run ``n_steps`` control steps in every slot; returns flat per-env, time-ordered arrays."""
    E = env.n_envs
    A = agent.params.act_dim
    obs_buf = np.zeros((n_steps, E, obs.shape[1]))
    u_buf = np.zeros((n_steps, E, A))
    logp_buf = np.zeros((n_steps, E))
    v_buf = np.zeros((n_steps, E))
    r_buf = np.zeros((n_steps, E))
    done_buf = np.zeros((n_steps, E), dtype=bool)
    term_buf = np.zeros((n_steps, E), dtype=bool)
    boot_buf = np.zeros((n_steps, E))
    for t in range(n_steps):
        norm = agent.stats.normalize(obs)
        mu, log_std, v = policy_forward(agent.params, norm)
        u = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        res = env.step(agent.bounds.squash(u))
        obs_buf[t], u_buf[t], v_buf[t] = obs, u, v
        logp_buf[t] = gaussian_logp(u, mu, log_std)
        r_buf[t], done_buf[t], term_buf[t] = res.reward, res.done, res.terminal
        trunc = res.done & ~res.terminal
        if trunc.any():
            _, _, vb = policy_forward(agent.params, agent.stats.normalize(res.final_obs[trunc]))
            boot_buf[t, trunc] = vb
        for _, dur, _, _ in res.finished:
            durations.append(dur)
        obs = res.obs
    _, _, last_v = policy_forward(agent.params, agent.stats.normalize(obs))

    next_v = np.zeros((n_steps, E))
    next_v[:-1] = v_buf[1:]
    next_v[-1] = last_v
    next_v = np.where(done_buf, np.where(term_buf, 0.0, boot_buf), next_v)
    boundary = done_buf.copy()
    boundary[-1] = True

    def flat(a):
        return np.swapaxes(a, 0, 1).reshape((E * n_steps,) + a.shape[2:])

    data = {k: flat(v) for k, v in dict(obs=obs_buf, u=u_buf, logp=logp_buf, value=v_buf, reward=r_buf,
                                          next_value=next_v, terminal=term_buf, boundary=boundary).items()}
    return data, obs


def train(cfg: TrainConfig, scenario: ScenarioSpec, gait: GaitConfig = GaitConfig(),
          control: ControlConfig = ControlConfig(), plant: PlantParams = PlantParams(),
          mirror: Optional[MirrorSpec] = None, *, window: int = 100,
          on_batch: Optional[Callable[[int, TrainResult], None]] = None) -> TrainResult:
    """Train a residual policy; the symmetry ratio in ``cfg`` selects augmentation."""
    start = time.perf_counter()
    mirror = MirrorSpec.reduced() if mirror is None else mirror
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, act_rng, upd_rng = (np.random.default_rng(s) for s in seeds)
    env_seed = int(np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3]).integers(2**63))
    env = VecEnv(cfg.n_envs, scenario, gait, control, plant, seed=env_seed, cap=scenario.train_cap)
    params = PolicyParams.init(K.OBS_DIM, K.ACT_DIM, init_rng, cfg.hidden, cfg.log_std_init)
    stats = SharedNormStats(K.OBS_DIM, mirror if cfg.ratio > 0 else None)
    agent = Agent(params, stats, ActionBounds.from_control(control))
    opt = Adam(params.flat.size, eps=cfg.adam_eps)
    result = TrainResult(agent)
    durations: collections.deque = collections.deque(maxlen=window)
    steps_per_env = cfg.batch_size // cfg.n_envs
    obs = env.reset()
    steps = 0
    while steps < cfg.total_steps:
        data, obs = collect(env, agent, steps_per_env, obs, act_rng, durations)
        adv = K.gae(data["reward"], data["value"], data["next_value"], data["terminal"], data["boundary"],
                    cfg.gamma, cfg.lam)
        ret = adv + data["value"]
        raw_obs, u, adv, ret = augment_arrays(data["obs"], data["u"], cfg.ratio, mirror, adv, ret)
        batch = Batch(agent.stats.normalize(raw_obs), u, adv, ret)
        lr = linear_lr(cfg.lr0, steps, cfg.total_steps)
        st = ppo_update(params, batch, cfg, opt, lr, upd_rng)
        update_shared_norm(agent.stats, data["obs"])
        steps += cfg.batch_size
        result.updates.append(st)
        if durations:
            result.curve.append((steps, float(np.mean(durations))))
        result.episodes = env._next_episode
        if on_batch is not None:
            on_batch(steps, result)
    result.wall_time = time.perf_counter() - start
    return result
