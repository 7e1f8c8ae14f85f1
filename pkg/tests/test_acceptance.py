"""Acceptance criteria 1-10, one PASS/FAIL line each (printed in the session summary).

Criteria 7-9 train eleven 2M-step policies on the reduced plant and take
roughly an hour on one CPU core; they are marked ``slow``.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import brute_force_lambda_return, rk4_lip, rk4_linear

from hybridstab import kernels as K
from hybridstab import lip
from hybridstab.config import load_config
from hybridstab.control import ControlConfig, dcm_tracker
from hybridstab.env import VecEnv
from hybridstab.experiments import (run_drift, run_eval, run_noise_sweep, run_radial, run_train, steps_to_reach)
from hybridstab.plant import ScenarioSpec
from hybridstab.ppo import (ActionBounds, PolicyParams, gaussian_logp, lambda_returns, policy_forward,
                            ppo_loss_and_grad)
from hybridstab.symmetry import (MirrorSpec, Sample, augment_batch, mirror_action, mirror_row, mirror_state, msi)

W = lip.natural_frequency(9.81, 0.6)
SPEC = MirrorSpec.reduced()
SEEDS = range(5)


# ---------------------------------------------------------------------------
# 1-6: analytical and learner properties


def test_criterion_1_closed_form_fidelity(acceptance_report):
    f, c0, cf = np.array([0.0, 0.1]), np.array([0.0, 0.0]), np.array([0.1, 0.0])
    lip.com_closed_form(f, c0, cf, 0.0, 0.5, W, 0.25)  # one-time JIT compilation is not part of the runtime
    t0 = time.perf_counter()
    v = lip.com_closed_form_velocity(f, c0, cf, 0.0, 0.5, W, 0.0)
    exact = [lip.com_closed_form(f, c0, cf, 0.0, 0.5, W, 0.01 * k) for k in range(1, 51)]
    dt = time.perf_counter() - t0
    # fixed-step RK4 reference at h = 1e-4 (pure Python, timed separately)
    t1 = time.perf_counter()
    c, worst = c0.copy(), 0.0
    for k in range(50):
        c, v = rk4_lip(c, v, f, W, 0.01)
        worst = max(worst, float(np.linalg.norm(c - exact[k]) / np.linalg.norm(exact[k])))
    t_oracle = time.perf_counter() - t1
    ok = worst < 1e-6 and dt < 1.0
    acceptance_report(1, ok, f"closed form vs RK4 max rel err {worst:.2e} (< 1e-6); closed-form runtime "
                             f"{1e3 * dt:.2f} ms (< 1 s), RK4 oracle {t_oracle:.2f} s")
    assert ok


def test_criterion_2_dcm_laws(acceptance_report):
    rng = np.random.default_rng(0)
    worst_div = 0.0
    for _ in range(500):
        z0, p = rng.uniform(-0.3, 0.3, (2, 2))
        t = rng.uniform(0, 0.6)
        zt = lip.dcm_propagate(z0, p, W, t).zeta
        worst_div = max(worst_div, abs(np.linalg.norm(zt - p) / np.linalg.norm(z0 - p) / math.exp(W * t) - 1))
    # the same law from a numerical simulation of the (c, zeta) system
    A = np.array([[-W, W], [0, W]])
    B = np.array([[0.0], [-W]])
    x = rk4_linear(A, B, [0.0, 0.05], np.array([0.0]), 0.4, h=1e-5)
    sim_err = abs(x[1] / 0.05 / math.exp(W * 0.4) - 1)
    # COM converges monotonically to a fixed DCM
    zeta, c = np.array([0.1, -0.05]), np.array([-0.2, 0.3])
    d = [np.linalg.norm(c - zeta)]
    for _ in range(1500):
        cd, _ = lip.state_derivative(c, zeta, zeta, W)
        c = c + 1e-3 * cd
        d.append(np.linalg.norm(c - zeta))
    mono = bool(np.all(np.diff(d) < 0))
    ok = worst_div < 1e-9 and sim_err < 1e-9 and mono
    acceptance_report(2, ok, f"divergence rel err {worst_div:.1e} analytic, {sim_err:.1e} simulated (< 1e-9); "
                             f"COM->DCM monotone: {mono}")
    assert ok


def test_criterion_3_capture_step_fixed_point(acceptance_report):
    from test_lip import _capture_gait

    off = _capture_gait(n_steps=20)
    spread = float(np.max(np.abs(off[1:] - off[1])))
    ok = spread < 1e-6
    acceptance_report(3, ok, f"DCM offset at step start varies by {spread:.1e} m over 20 steps (< 1e-6)")
    assert ok


def test_criterion_4_tracker_contraction(acceptance_report):
    K_z, h = 3.0, 1e-4
    c, v = np.array([0.04, -0.02]), np.zeros(2)
    e0 = np.linalg.norm(c + v / W)
    for _ in range(5000):
        p = dcm_tracker(c + v / W, np.zeros(2), np.zeros(2), (K_z, K_z), W)
        c, v = (p + (c - p) * math.cosh(W * h) + v / W * math.sinh(W * h),
                (c - p) * W * math.sinh(W * h) + v * math.cosh(W * h))
    ratio = np.linalg.norm(c + v / W) / e0
    rel = abs(ratio / math.exp(-K_z * 0.5) - 1)
    ok = rel < 0.02
    acceptance_report(4, ok, f"DCM error decay over 0.5 s off exp(-K t) by {100 * rel:.3f}% (< 2%)")
    assert ok


def test_criterion_5_automorphism_suite(acceptance_report):
    rng = np.random.default_rng(1)
    paper = MirrorSpec.paper_layout()
    inv = all(np.array_equal(mirror_state(mirror_state(s, sp), sp), s) and
              np.array_equal(mirror_action(mirror_action(a, sp), sp), a)
              for sp in (SPEC, paper)
              for s, a in [(rng.normal(size=(100, sp.obs_dim)), rng.normal(size=(100, sp.act_dim)))])

    # transition symmetry on states visited by random-action rollouts under pushes
    cfg = ControlConfig()
    bounds = ActionBounds.from_control(cfg)
    env = VecEnv(8, ScenarioSpec.named("l1", push_interval=(0.4, 0.6)), seed=0, cap=50.0)
    env.reset()
    worst, checked = 0.0, 0
    while checked < 1000:
        for i in range(8):
            row = env.states[i].copy()
            if row[K.S_STATUS] != K.STATUS_ALIVE:
                continue
            a = bounds.squash(rng.normal(0, 0.7, K.ACT_DIM))
            cmd = np.zeros(K.CMD_DIM)
            s1 = row.copy()
            K.env_step(s1, a, env.prm, env.ctl, env.push_t[i], env.push_fx[i], env.push_fy[i], env.tilt_r[i],
                       env.terrain[i], cmd)
            s2 = mirror_row(row)
            K.env_step(s2, mirror_action(a, SPEC), env.prm, env.ctl, env.push_t[i], env.push_fx[i],
                       -env.push_fy[i], env.tilt_r[i], env.terrain[i], cmd)
            worst = max(worst, float(np.max(np.abs(mirror_row(s1) - s2))))
            checked += 1
        env.step(bounds.squash(rng.normal(0, 0.7, (8, K.ACT_DIM))))

    acts = bounds.squash(rng.normal(size=(1000, K.ACT_DIM)))
    env1000 = VecEnv(1, ScenarioSpec(), seed=0)
    reward_exact = np.array_equal(env1000.reward(acts), env1000.reward(mirror_action(acts, SPEC)))

    d = rng.normal(size=8)
    msi_ok = msi(d, d) == 0.0 and msi(d, -d) == 2.0
    for _ in range(1000):
        x, y = rng.normal(size=(2, 8)) * rng.uniform(0, 3, (2, 1))
        msi_ok &= 0.0 <= msi(x, y) <= 2.0
    ok = inv and worst < 1e-6 and reward_exact and msi_ok
    acceptance_report(5, ok, f"involution exact: {inv}; transition asymmetry {worst:.1e} over {checked} pairs "
                             f"(< 1e-6); reward symmetry exact: {reward_exact}; MSI range and endpoints: {msi_ok}")
    assert ok


def _fd_rel(params, args, coefs, h=1e-5):
    _, g, _ = ppo_loss_and_grad(params, *args, *coefs)
    fd = np.zeros_like(g)
    for k in range(params.flat.size):
        old = params.flat[k]
        params.flat[k] = old + h
        lp = ppo_loss_and_grad(params, *args, *coefs)[0]
        params.flat[k] = old - h
        lm = ppo_loss_and_grad(params, *args, *coefs)[0]
        params.flat[k] = old
        fd[k] = (lp - lm) / (2 * h)
    return float(np.linalg.norm(g - fd) / np.linalg.norm(fd))


def test_criterion_6_learner_correctness(acceptance_report):
    rng = np.random.default_rng(2)
    params = PolicyParams.init(4, 2, rng, (5, 4))
    params.flat += rng.normal(0, 0.3, params.flat.size)
    n = 32
    x = rng.normal(size=(n, 4))
    mu, log_std, _ = policy_forward(params, x)
    u = mu + np.exp(log_std) * rng.normal(size=(n, 2))
    lo = gaussian_logp(u, mu, log_std) + rng.uniform(-0.05, 0.05, n)
    adv, ret = rng.normal(size=(2, n))
    zero = np.zeros(n)
    grads = {
        "policy": _fd_rel(params, (x, u, lo, adv, zero), (0.2, 0.0, 0.0)),
        "value": _fd_rel(params, (x, u, lo, zero, ret), (0.2, 1.0, 0.0)),
        "entropy": _fd_rel(params, (x, u, lo, zero, zero), (0.2, 0.0, 1.0)),
        "total": _fd_rel(params, (x, u, lo, adv, ret), (0.2, 0.5, 0.003)),
    }
    gae_err = 0.0
    for terminal in (True, False):
        for _ in range(20):
            r, v = rng.normal(size=(2, 10))
            boot = rng.normal()
            gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
            term = np.zeros(10, bool)
            term[-1] = terminal
            bound = np.zeros(10, bool)
            bound[-1] = True
            got = lambda_returns(r, v, np.r_[v[1:], boot], term, bound, gamma, lam)
            gae_err = max(gae_err, float(np.max(np.abs(got - brute_force_lambda_return(r, v, boot, terminal,
                                                                                        gamma, lam)))))
    W4 = [Sample(np.full(K.OBS_DIM, float(k)), np.full(K.ACT_DIM, float(k)), float(k), 0.0) for k in range(1, 5)]
    out = augment_batch(W4, Fraction(1, 2), SPEC)
    layout = (len(out) == 6 and out[0] is W4[0] and out[1] is W4[1] and out[3] is W4[2] and out[4] is W4[3]
              and np.array_equal(out[2].S, mirror_state(W4[1].S, SPEC))
              and np.array_equal(out[5].A, mirror_action(W4[3].A, SPEC)))
    worst_g = max(grads.values())
    ok = worst_g < 1e-4 and gae_err < 1e-9 and layout
    acceptance_report(6, ok, "FD rel err " + ", ".join(f"{k} {v:.1e}" for k, v in grads.items())
                      + f" (< 1e-4); lambda-return err {gae_err:.1e} (< 1e-9); ratio-1/2 layout exact: {layout}")
    assert ok


# ---------------------------------------------------------------------------
# 7-9: trained policies


class Runs:
    """Trains and evaluates lazily; every result is cached for the session."""

    def __init__(self, root):
        self.root = root
        self.base = load_config(None)
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def cfg(self, ratio, seed, kind="l1"):
        return self.base.with_scenario(kind).with_ratio(ratio).with_seed(seed)

    def model(self, ratio, seed, kind="l1"):
        def go():
            t = time.perf_counter()
            art = run_train(self.cfg(ratio, seed, kind), self.root / f"{kind}_r{ratio.replace('/', '_')}_s{seed}")
            return art, time.perf_counter() - t
        return self._get(("model", ratio, seed, kind), go)

    def eval(self, ratio, seed):
        def go():
            t = time.perf_counter()
            rep = run_eval(self.model(ratio, seed)[0].result.agent, self.cfg(ratio, seed))
            return rep, time.perf_counter() - t
        return self._get(("eval", ratio, seed), go)

    def baseline(self, seed):
        return self._get(("base", seed), lambda: run_eval(None, self.cfg("0", seed)))

    def drift(self, ratio, seed):
        return self._get(("drift", ratio, seed),
                         lambda: run_drift(self.model(ratio, seed)[0].result.agent, self.cfg(ratio, seed)))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


@pytest.mark.slow
def test_criterion_7_hybrid_improvement(runs, acceptance_report):
    hyb = [runs.eval("0", s)[0].mean_duration for s in SEEDS]
    base = [runs.baseline(s).mean_duration for s in SEEDS]
    wall = sum(runs.model("0", s)[1] + runs.eval("0", s)[1] for s in SEEDS)
    factor = np.mean(hyb) / np.mean(base)
    ok = factor >= 10.0 and wall <= 2 * 3600
    acceptance_report(7, ok, f"hybrid {np.mean(hyb):.1f} s (seeds {', '.join(f'{h:.0f}' for h in hyb)}) vs baseline "
                             f"{np.mean(base):.2f} s: {factor:.1f}x (>= 10x); 5 trainings + evals {wall / 60:.0f} min")
    assert ok


@pytest.mark.slow
def test_criterion_8_symmetry_benefits(runs, acceptance_report):
    bar = 10.0 * np.mean([runs.baseline(s).mean_duration for s in SEEDS])
    reach = {r: [steps_to_reach(runs.model(r, s)[0].eval_curve, bar) for s in SEEDS] for r in ("0", "1/2")}
    med = {r: float(np.median(v)) for r, v in reach.items()}
    msi_ = {r: float(np.mean([runs.eval(r, s)[0].mean_msi for s in SEEDS])) for r in ("0", "1/2")}
    drift = {r: float(np.mean([runs.drift(r, s).distance for s in SEEDS])) for r in ("0", "1/2")}
    faster = med["1/2"] < med["0"]
    ok = faster and msi_["1/2"] < msi_["0"] and drift["1/2"] < drift["0"]

    def m(v):
        return "never" if math.isinf(v) else f"{v / 1e6:.2f}M"

    acceptance_report(8, ok, f"steps to {bar:.0f} s median {m(med['1/2'])} (1/2) vs {m(med['0'])} (0); "
                             f"MSI {msi_['1/2']:.3f} vs {msi_['0']:.3f}; drift {drift['1/2']:.1f} m vs "
                             f"{drift['0']:.1f} m (all must be lower for 1/2)")
    assert ok


@pytest.mark.slow
def test_criterion_9_noise_robustness(runs, acceptance_report):
    art, _ = runs.model("0", 0, "l2")
    rows = dict(run_noise_sweep(art.result.agent, runs.cfg("0", 0, "l2")))
    frac = rows[20.0] / rows[0.0]
    ok = frac >= 0.5
    acceptance_report(9, ok, f"L2 model {rows[0.0]:.1f} s clean, {rows[20.0]:.1f} s at 20% noise: "
                             f"{100 * frac:.0f}% (>= 50%)")
    assert ok


# ---------------------------------------------------------------------------
# 10: determinism


def test_criterion_10_determinism(tmp_path, acceptance_report):
    cfg = load_config(None).with_seed(9).with_ratio("1/2")
    from dataclasses import replace

    cfg = replace(cfg, train=replace(cfg.train, total_steps=16384),
                  eval=replace(cfg.eval, episodes=8, curve_interval=1, curve_episodes=4, checkpoint_interval=1,
                               radial_directions=4, radial_trials=2, radial_resolution=200.0, drift_duration=20.0,
                               noise_levels=(1.0, 1.2), noise_episodes=4))
    files = {}
    for rep in ("a", "b"):
        out = tmp_path / rep
        art = run_train(cfg, out)
        agent = art.result.agent
        run_eval(agent, cfg, out)
        run_radial(agent, cfg, out)
        run_drift(agent, cfg, out)
        run_noise_sweep(agent, cfg, out)
        files[rep] = {p.relative_to(out).as_posix(): p.read_bytes()
                      for p in sorted(out.rglob("*")) if p.is_file()}
    same = files["a"] == files["b"]
    n_csv = sum(k.endswith(".csv") for k in files["a"])
    acceptance_report(10, same, f"{len(files['a'])} artifacts ({n_csv} CSV) byte-identical across re-runs: {same}")
    assert same
