"""Training and evaluation protocols, each writing CSV artifacts.

Every CSV starts with a header row followed by one comment row
``# config_hash=<hex>,seed=<int>``.  Floats are written with ``repr`` so a
re-run with the same configuration and seed reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels as K
from .config import ExperimentConfig, config_hash, dump_config
from .env import VecEnv, baseline_action
from .plant import PushEvent, ScenarioSpec
from .ppo import load_checkpoint, save_checkpoint
from .symmetry import MirrorSpec, mirror_action, mirror_state, msi_rows
from .trainer import Agent, TrainResult, train

Policy = Callable[[np.ndarray], np.ndarray]


def derive_seed(seed: int, tag: str) -> int:
    """Independent 63-bit seed for a named protocol stream."""
    key = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([int(seed), key]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows, cfg: ExperimentConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        fh.write(f"# config_hash={config_hash(cfg)},seed={cfg.train.seed}\n")
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def make_policy(agent: Optional[Agent], cfg: ExperimentConfig) -> Policy:
    """Deterministic physical-action map; ``None`` selects the analytical baseline."""
    if agent is not None:
        return agent.deterministic
    gains = cfg.control.gains.as_array()

    def baseline(obs):
        a = np.zeros((np.atleast_2d(obs).shape[0], K.ACT_DIM))
        a[:, K.N_RESIDUALS:] = gains
        return a

    return baseline


def load_agent(path, cfg: Optional[ExperimentConfig] = None) -> Agent:
    return Agent.from_checkpoint(load_checkpoint(path, K.OBS_DIM, K.ACT_DIM))


# ---------------------------------------------------------------------------
# episode runner


@dataclass
class EpisodeRecord:
    episode: int
    duration: float
    fell: bool
    nni: float
    msi: float


def run_episodes(policy: Policy, cfg: ExperimentConfig, scenario: ScenarioSpec, seed: int, episodes: int, *,
                 cap: Optional[float] = None, obs_noise: float = 1.0, push_fn=None,
                 mirror: Optional[MirrorSpec] = None, n_envs: Optional[int] = None) -> list[EpisodeRecord]:
    """Run ``episodes`` seeded episodes with a deterministic policy; records sorted by episode id.

    With ``mirror`` the per-step MSI between the policy's residuals and the
    mirrored policy's residuals (each divided by its saturation S) is averaged
    over each episode.
    """
    S = cfg.control.S
    n = min(n_envs or cfg.eval.n_envs, episodes)
    env = VecEnv(n, scenario, cfg.gait, cfg.control, cfg.plant, seed=seed,
                 cap=scenario.eval_cap if cap is None else cap, obs_noise=obs_noise, push_fn=push_fn,
                 auto_reset=False, max_episodes=episodes)
    obs = env.reset()
    msi_sum = np.zeros(n)
    out: list[EpisodeRecord] = []
    while env.active.any():
        act = policy(obs)
        if mirror is not None:
            act_m = mirror_action(policy(mirror_state(obs, mirror)), mirror)
            # residuals in units of their saturation, as in the reward
            m = msi_rows(act[:, :K.N_RESIDUALS] / S, act_m[:, :K.N_RESIDUALS] / S)
            msi_sum += np.where(env.active, m, 0.0)
        res = env.step(act)
        obs = res.obs
        for ep, dur, fell, nni in res.finished:
            i = int(np.flatnonzero(env.episode_id == ep)[0])
            steps = max(env.states[i, K.S_NSTEPS], 1.0)
            out.append(EpisodeRecord(ep, dur, fell, nni, float(msi_sum[i] / steps)))
            msi_sum[i] = 0.0
        for i in env.start_pending():
            obs[i] = env.slot_observation(i)
    out.sort(key=lambda r: r.episode)
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainArtifacts:
    result: TrainResult
    checkpoint: Path
    curve_csv: Path
    eval_curve_csv: Path
    eval_curve: list  # (env steps, deterministic mean duration s)


def run_train(cfg: ExperimentConfig, out_dir, *, log: Optional[Callable[[str], None]] = None) -> TrainArtifacts:
    """Train one policy; writes the rolling curve, a deterministic evaluation curve and checkpoints."""
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    tc = cfg.train
    mirror = cfg.mirror_spec()
    curve_seed = derive_seed(tc.seed, "curve")
    n_batches = math.ceil(tc.total_steps / tc.batch_size)
    eval_curve: list = []

    def on_batch(steps: int, result: TrainResult) -> None:
        k = steps // tc.batch_size
        last = k >= n_batches
        if k % cfg.eval.curve_interval == 0 or last:
            recs = run_episodes(result.agent.deterministic, cfg, cfg.scenario, curve_seed, cfg.eval.curve_episodes)
            eval_curve.append((steps, float(np.mean([r.duration for r in recs]))))
            if log:
                roll = result.curve[-1][1] if result.curve else float("nan")
                log(f"steps {steps:>9d}  rolling {roll:7.2f} s  eval {eval_curve[-1][1]:7.2f} s")
        if k % cfg.eval.checkpoint_interval == 0 and not last:
            a = result.agent
            save_checkpoint(a.params, a.stats, a.bounds, ckpt_dir / f"ckpt_{steps:09d}.bin", seed=tc.seed,
                            ratio=tc.ratio, steps=steps)

    result = train(tc, cfg.scenario, cfg.gait, cfg.control, cfg.plant, mirror, window=cfg.eval.window,
                   on_batch=on_batch)
    a = result.agent
    final_steps = n_batches * tc.batch_size
    ckpt = out / "model.ckpt"
    save_checkpoint(a.params, a.stats, a.bounds, ckpt, seed=tc.seed, ratio=tc.ratio, steps=final_steps)
    curve_csv = write_csv(out / "train_curve.csv", ("million_steps", "mean_duration_s"),
                          [(s / 1e6, d) for s, d in result.curve], cfg)
    eval_csv = write_csv(out / "eval_curve.csv", ("steps", "million_steps", "mean_duration_s"),
                         [(s, s / 1e6, d) for s, d in eval_curve], cfg)
    return TrainArtifacts(result, ckpt, curve_csv, eval_csv, eval_curve)


def steps_to_reach(eval_curve: Sequence[tuple], bar: float) -> float:
    """First evaluation step count whose mean duration reaches ``bar``; ``inf`` if never."""
    for steps, dur in eval_curve:
        if dur >= bar:
            return float(steps)
    return math.inf


# ---------------------------------------------------------------------------
# evaluation protocols


@dataclass
class EvalReport:
    scenario: str
    mean_duration: float
    mean_nni: float
    mean_msi: float
    episodes: int
    falls: int
    records: list

    @property
    def durations(self) -> np.ndarray:
        return np.array([r.duration for r in self.records])


def run_eval(agent: Optional[Agent], cfg: ExperimentConfig, out_dir=None, *,
             episodes: Optional[int] = None) -> EvalReport:
    """Deterministic evaluation on ``cfg.scenario``; the baseline (``agent=None``) has NNI and MSI 0."""
    episodes = episodes or cfg.eval.episodes
    seed = derive_seed(cfg.train.seed, "eval")
    recs = run_episodes(make_policy(agent, cfg), cfg, cfg.scenario, seed, episodes,
                        mirror=cfg.mirror_spec() if agent is not None else None)
    if agent is None:
        recs = [replace(r, nni=0.0, msi=0.0) for r in recs]
    rep = EvalReport(cfg.scenario.kind, float(np.mean([r.duration for r in recs])),
                     float(np.mean([r.nni for r in recs])), float(np.mean([r.msi for r in recs])),
                     len(recs), sum(r.fell for r in recs), recs)
    if out_dir is not None:
        out = Path(out_dir)
        tag = cfg.scenario.kind
        write_csv(out / f"eval_{tag}.csv",
                  ("scenario", "episodes", "mean_duration_s", "mean_nni", "mean_msi", "falls"),
                  [(tag, rep.episodes, rep.mean_duration, rep.mean_nni, rep.mean_msi, rep.falls)], cfg)
        write_csv(out / f"eval_{tag}_episodes.csv", ("episode", "duration_s", "fell", "nni", "msi"),
                  [(r.episode, r.duration, r.fell, r.nni, r.msi) for r in recs], cfg)
    return rep


def run_radial(agent: Optional[Agent], cfg: ExperimentConfig, out_dir=None) -> list[tuple[float, float]]:
    """Largest push each direction withstands in at least ``threshold`` of the trials.

    Directions are measured from the walking direction (+x) toward the left
    (+y).  Each trial walks in place and receives one push at a time drawn
    from ``radial_push_window``; it recovers if it is still standing
    ``radial_settle`` seconds later.  The force is bisected per direction,
    assuming recovery is monotone in force, down to ``radial_resolution``.
    """
    ev = cfg.eval
    D, T = ev.radial_directions, ev.radial_trials
    angles = np.arange(D) * (360.0 / D)
    scenario = replace(cfg.scenario, pushes=False, tilt=False, terrain_amplitude=0.0)
    cap = ev.radial_push_window[1] + scenario.push_duration + ev.radial_settle
    seed = derive_seed(cfg.train.seed, "radial")
    policy = make_policy(agent, cfg)
    lo = np.zeros(D)
    hi = np.full(D, ev.radial_force_max)

    def survival(forces: np.ndarray) -> np.ndarray:
        def push_fn(rng, episode):
            d = episode // T
            t0 = rng.uniform(*ev.radial_push_window)
            return [PushEvent.at_angle(t0, float(forces[d]), float(angles[d]), scenario.push_duration)]

        recs = run_episodes(policy, cfg, scenario, seed, D * T, cap=cap, push_fn=push_fn, n_envs=D * T)
        ok = np.array([not r.fell for r in recs]).reshape(D, T)
        return ok.mean(axis=1) >= ev.radial_threshold

    top_ok = survival(hi)
    lo[top_ok] = hi[top_ok]
    while np.any(hi - lo > ev.radial_resolution):
        mid = 0.5 * (lo + hi)
        ok = survival(mid)
        open_ = hi - lo > ev.radial_resolution
        lo = np.where(open_ & ok, mid, lo)
        hi = np.where(open_ & ~ok, mid, hi)
    rows = [(float(a), float(f)) for a, f in zip(angles, lo)]
    if out_dir is not None:
        write_csv(Path(out_dir) / "radial.csv", ("direction_deg", "max_force_n"), rows, cfg)
    return rows


@dataclass
class DriftResult:
    path: np.ndarray  # (n, 3) rows of t, x, y
    distance: float
    fell: bool
    duration: float


def run_drift(agent: Optional[Agent], cfg: ExperimentConfig, out_dir=None) -> DriftResult:
    """Walk in place on flat ground without pushes and sum the 5 s-sampled path length."""
    ev = cfg.eval
    scenario = replace(cfg.scenario, kind="l1", pushes=False, tilt=False, terrain_amplitude=0.0)
    env = VecEnv(1, scenario, cfg.gait, cfg.control, cfg.plant, seed=derive_seed(cfg.train.seed, "drift"),
                 cap=ev.drift_duration, auto_reset=False, max_episodes=1)
    policy = make_policy(agent, cfg)
    per_sample = int(round(ev.drift_sample / cfg.plant.control_dt))
    obs = env.reset()
    pts = [(0.0, *env.com_positions()[0])]
    n = 0
    fell = False
    while env.active[0]:
        res = env.step(policy(obs))
        obs = res.obs
        n += 1
        if res.done[0]:
            fell = bool(res.terminal[0])
            if fell or n % per_sample:
                pts.append((n * cfg.plant.control_dt, *env.com_positions()[0]))
        if n % per_sample == 0 and not fell:
            pts.append((n * cfg.plant.control_dt, *env.com_positions()[0]))
    path = np.array(pts)
    dist = float(np.sum(np.hypot(np.diff(path[:, 1]), np.diff(path[:, 2]))))
    result = DriftResult(path, dist, fell, n * cfg.plant.control_dt)
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "drift.csv", ("t_s", "x_m", "y_m"), [tuple(r) for r in path], cfg)
        write_csv(out / "drift_summary.csv", ("total_distance_m", "duration_s", "fell"),
                  [(dist, result.duration, fell)], cfg)
    return result


def run_noise_sweep(agent: Optional[Agent], cfg: ExperimentConfig, out_dir=None) -> list[tuple[float, float]]:
    """Mean duration per observation-noise bound N, pushes every fixed interval.

    All levels share the same episode seeds, so the disturbances are identical
    and only the noise differs.
    """
    ev = cfg.eval
    iv = ev.noise_push_interval
    scenario = replace(cfg.scenario, push_interval=(iv, iv))
    seed = derive_seed(cfg.train.seed, "noise")
    policy = make_policy(agent, cfg)
    rows = []
    for N in ev.noise_levels:
        recs = run_episodes(policy, cfg, scenario, seed, ev.noise_episodes, obs_noise=float(N))
        rows.append((round((N - 1.0) * 100.0, 9), float(np.mean([r.duration for r in recs]))))
    if out_dir is not None:
        write_csv(Path(out_dir) / f"noise_{cfg.scenario.kind}.csv", ("noise_pct", "mean_duration_s"), rows, cfg)
    return rows
