"""Batched environment over the fused kernels.

Each episode draws its disturbances (push schedule, landing heights, tilt
randomness) up front from a generator keyed on ``(seed, episode id)``, so a
given episode is identical no matter which slot of the batch runs it.
Observation noise uses a separate stream of the same key, which keeps the
scenario fixed while the noise level varies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels as K
from .control import ControlConfig
from .gait import GaitConfig
from .plant import PlantParams, PushEvent, ScenarioSpec, kernel_params, schedule_pushes, sample_terrain

PushFn = Callable[[np.random.Generator, int], list]


def control_params(cfg: ControlConfig, gait: GaitConfig, params: PlantParams) -> np.ndarray:
    ctl = np.zeros(K.CTRL_PARAM_DIM)
    ctl[K.C_BASE_T] = gait.step_duration
    ctl[K.C_BASE_CZ] = gait.com_height
    ctl[K.C_T_MIN] = cfg.step_time_min
    ctl[K.C_T_MAX] = cfg.step_time_max
    ctl[K.C_TORQUE_KD] = cfg.torque_kd
    ctl[K.C_PHYS_DT] = params.physics_dt
    ctl[K.C_SUBSTEPS] = params.substeps
    ctl[K.C_FORCE_ADJUST] = 1.0 if cfg.force_step_adjust else 0.0
    return ctl


def initial_row(gait: GaitConfig, prm: np.ndarray, side: int = 1, origin=(0.0, 0.0)) -> np.ndarray:
    """State row standing on the reference at the start of a step.

    The COM sits midway between the feet with the velocity the first planned
    segment asks for, so an undisturbed controller starts with zero DCM error.
    """
    row = np.zeros(K.ENV_DIM)
    ox, oy = origin
    half = gait.stride_y / 2
    w = math.sqrt(prm[K.P_G] / gait.com_height)
    T = gait.step_duration
    row[K.S_SUP_X], row[K.S_SUP_Y] = ox, oy + side * half
    row[K.S_SW_X], row[K.S_SW_Y] = ox, oy - side * half
    row[K.S_LIFT_X], row[K.S_LIFT_Y] = row[K.S_SW_X], row[K.S_SW_Y]
    row[K.S_SIDE] = side
    row[K.S_CX], row[K.S_CY], row[K.S_CZ] = ox, oy, gait.com_height
    row[K.S_TCMD] = T
    row[K.S_CZCMD] = gait.com_height
    nx, ny = K.plan_next(row[K.S_SUP_X], row[K.S_SUP_Y], side, prm)
    row[K.S_NEXT_X], row[K.S_NEXT_Y] = nx, ny
    row[K.S_TGT_X], row[K.S_TGT_Y] = nx, ny
    K.start_segment(row, w)
    for ax, (c, f, n) in enumerate(((K.S_CX, K.S_SUP_X, K.S_NEXT_X), (K.S_CY, K.S_SUP_Y, K.S_NEXT_Y))):
        cf = 0.5 * (row[f] + row[n])
        row[K.S_VX + ax] = K.com_bvp_vel(row[f], row[c], cf, 0.0, T, w, 0.0)
    row[K.S_ZMP_X], row[K.S_ZMP_Y] = row[K.S_SUP_X], row[K.S_SUP_Y]
    row[K.S_TILT_SLOT] = -1.0  # first tilt target is drawn at t = 0
    return row


@dataclass
class EpisodeDraws:
    push_t: np.ndarray
    push_fx: np.ndarray
    push_fy: np.ndarray
    terrain: np.ndarray
    tilt_r: np.ndarray
    side: int


def episode_sizes(scenario: ScenarioSpec, cfg: ControlConfig, cap: float) -> tuple[int, int, int]:
    n_push = int(math.ceil(cap / scenario.push_interval[0])) + 2
    n_land = int(math.ceil(cap / cfg.step_time_min)) + 4
    n_tilt = int(math.ceil(cap / scenario.tilt_period)) + 4
    return n_push, n_land, n_tilt


def draw_episode(rng: np.random.Generator, scenario: ScenarioSpec, sizes, cap: float, episode: int,
                 push_fn: Optional[PushFn] = None) -> EpisodeDraws:
    n_push, n_land, n_tilt = sizes
    side = 1 if rng.random() < 0.5 else -1
    if push_fn is not None:
        events = push_fn(rng, episode)
    elif scenario.pushes:
        events = schedule_pushes(rng, scenario.push_interval, scenario.push_force, scenario.push_duration, cap)
    else:
        events = []
    if len(events) > n_push:
        raise ValueError(f"{len(events)} pushes exceed the per-episode buffer of {n_push}")
    push_t = np.full(n_push, np.inf)
    push_fx = np.zeros(n_push)
    push_fy = np.zeros(n_push)
    for k, ev in enumerate(events):
        push_t[k] = ev.t_start
        push_fx[k], push_fy[k] = ev.force_vector
    terrain = sample_terrain(rng, scenario.terrain_amplitude, n_land)
    if scenario.tilt:
        tilt_r = rng.uniform(-scenario.tilt_random_deg, scenario.tilt_random_deg, (n_tilt, 2))
    else:
        tilt_r = np.zeros((n_tilt, 2))
    return EpisodeDraws(push_t, push_fx, push_fy, terrain, tilt_r, side)


@dataclass
class StepResult:
    obs: np.ndarray  # next observation (after reset where an episode ended)
    reward: np.ndarray
    done: np.ndarray  # episode ended this step
    terminal: np.ndarray  # ended by a fall (no bootstrap)
    final_obs: np.ndarray  # observation reached before any reset
    finished: list = field(default_factory=list)  # (episode id, duration s, fell, mean NNI)


class VecEnv:
    """``n_envs`` independent plants stepped together at the control rate.

    Actions are physical 12-vectors: 8 residuals within ``+-S`` followed by the
    4 gains.  With ``auto_reset`` an ended slot starts the next episode id.
    """

    def __init__(self, n_envs: int, scenario: ScenarioSpec, gait: GaitConfig = GaitConfig(),
                 control: ControlConfig = ControlConfig(), params: PlantParams = PlantParams(), *,
                 seed: int = 0, cap: Optional[float] = None, obs_noise: float = 1.0,
                 push_fn: Optional[PushFn] = None, auto_reset: bool = True, max_episodes: Optional[int] = None,
                 first_episode: int = 0):
        if n_envs <= 0:
            raise ValueError("n_envs must be positive")
        if obs_noise < 1.0:
            raise ValueError("observation noise bound must be >= 1")
        self.n_envs = n_envs
        self.scenario = scenario
        self.gait = gait
        self.control = control
        self.params = params
        self.seed = int(seed)
        self.cap = scenario.train_cap if cap is None else float(cap)
        self.obs_noise = obs_noise
        self.push_fn = push_fn
        self.auto_reset = auto_reset
        self.max_episodes = max_episodes
        self.prm = kernel_params(params, scenario, gait, self.cap)
        self.ctl = control_params(control, gait, params)
        self.S = control.S
        self.sizes = episode_sizes(scenario, control, self.cap)
        n_push, n_land, n_tilt = self.sizes
        self.states = np.zeros((n_envs, K.ENV_DIM))
        self.push_t = np.zeros((n_envs, n_push))
        self.push_fx = np.zeros((n_envs, n_push))
        self.push_fy = np.zeros((n_envs, n_push))
        self.terrain = np.zeros((n_envs, n_land))
        self.tilt_r = np.zeros((n_envs, n_tilt, 2))
        self.obs = np.zeros((n_envs, K.OBS_DIM))
        self.cmd = np.zeros((n_envs, K.CMD_DIM))
        self.episode_id = np.full(n_envs, -1, dtype=np.int64)
        self.active = np.zeros(n_envs, dtype=bool)
        self.nni_sum = np.zeros(n_envs)
        self._noise_rng: list = [None] * n_envs
        self._next_episode = first_episode
        self._last_episode = None if max_episodes is None else first_episode + max_episodes

    # -- episode management ---------------------------------------------------
    def _episode_rngs(self, episode: int):
        ss = np.random.SeedSequence(self.seed, spawn_key=(episode,))
        scen, noise = ss.spawn(2)
        return np.random.default_rng(scen), np.random.default_rng(noise)

    def _start(self, i: int) -> bool:
        if self._last_episode is not None and self._next_episode >= self._last_episode:
            self.active[i] = False
            self.states[i, K.S_STATUS] = K.STATUS_TIMEOUT
            return False
        ep = self._next_episode
        self._next_episode += 1
        rng, noise_rng = self._episode_rngs(ep)
        d = draw_episode(rng, self.scenario, self.sizes, self.cap, ep, self.push_fn)
        self.push_t[i], self.push_fx[i], self.push_fy[i] = d.push_t, d.push_fx, d.push_fy
        self.terrain[i] = d.terrain
        self.tilt_r[i] = d.tilt_r
        self.states[i] = initial_row(self.gait, self.prm, d.side)
        self._noise_rng[i] = noise_rng
        self.episode_id[i] = ep
        self.active[i] = True
        self.nni_sum[i] = 0.0
        K.observe(self.states[i], self.obs[i])
        return True

    def reset(self) -> np.ndarray:
        for i in range(self.n_envs):
            self._start(i)
        return self.observation()

    def _noisy(self, i: int, raw: np.ndarray) -> np.ndarray:
        if self.obs_noise == 1.0:
            return raw.copy()
        return raw * self._noise_rng[i].uniform(1.0, self.obs_noise, raw.shape)

    def observation(self) -> np.ndarray:
        out = self.obs.copy()
        if self.obs_noise != 1.0:
            for i in range(self.n_envs):
                if self.active[i]:
                    out[i] = self._noisy(i, self.obs[i])
        return out

    # -- stepping ---------------------------------------------------------------
    def reward(self, actions: np.ndarray) -> np.ndarray:
        return residual_reward(actions, self.S)

    def step(self, actions: np.ndarray) -> StepResult:
        actions = np.ascontiguousarray(actions, dtype=np.float64)
        if actions.shape != (self.n_envs, K.ACT_DIM):
            raise ValueError(f"actions must have shape {(self.n_envs, K.ACT_DIM)}, got {actions.shape}")
        was_active = self.active.copy()
        K.batch_env_step(self.states, actions, self.prm, self.ctl, self.push_t, self.push_fx, self.push_fy,
                         self.tilt_r, self.terrain, self.obs, self.cmd)
        r = np.where(was_active, self.reward(actions), 0.0)
        self.nni_sum += np.where(was_active, 1.0 - r, 0.0)
        status = self.states[:, K.S_STATUS]
        done = was_active & (status != K.STATUS_ALIVE)
        terminal = done & (status == K.STATUS_FELL)
        final_obs = self.obs.copy()
        if self.obs_noise != 1.0:
            for i in np.flatnonzero(was_active):
                final_obs[i] = self._noisy(i, self.obs[i])
        finished = []
        for i in np.flatnonzero(done):
            n = self.states[i, K.S_NSTEPS]
            finished.append((int(self.episode_id[i]), float(n * self.params.control_dt),
                             bool(terminal[i]), float(self.nni_sum[i] / n)))
            self.active[i] = False
            if self.auto_reset:
                self._start(i)
        obs = final_obs.copy()
        for i in np.flatnonzero(done):
            if self.active[i]:
                obs[i] = self._noisy(i, self.obs[i])
        return StepResult(obs, r, done, terminal, final_obs, finished)

    def start_pending(self) -> list:
        """Fill idle slots with new episodes (evaluation without auto reset); returns started slots."""
        return [i for i in range(self.n_envs) if not self.active[i] and self._start(i)]

    def slot_observation(self, i: int) -> np.ndarray:
        return self._noisy(i, self.obs[i])

    def com_positions(self) -> np.ndarray:
        return self.states[:, K.S_CX:K.S_CY + 1].copy()


def residual_reward(actions: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``1 - mean_i |delta_i| / S_i`` per row, summed in a fixed order so sign flips give identical bits."""
    actions = np.atleast_2d(actions)
    acc = np.zeros(actions.shape[0])
    for i in range(K.N_RESIDUALS):
        acc += np.abs(actions[:, i]) / S[i]
    return 1.0 - acc / K.N_RESIDUALS


def baseline_action(cfg: ControlConfig, n: int = 1) -> np.ndarray:
    """Zero residuals with the expert gains."""
    a = np.zeros((n, K.ACT_DIM))
    a[:, K.N_RESIDUALS:] = cfg.gains.as_array()
    return a
