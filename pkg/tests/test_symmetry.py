from fractions import Fraction

import numpy as np
import pytest

from hybridstab import kernels as K
from hybridstab.control import ControlConfig
from hybridstab.env import VecEnv
from hybridstab.plant import ScenarioSpec, build_observation, mirror_plant_state, PlantState
from hybridstab.ppo import ActionBounds
from hybridstab.symmetry import (MirrorSpec, Sample, SharedNormStats, augment_arrays, augment_batch,
                                 augmentation_mask, mirror_action, mirror_row, mirror_state, msi, msi_rows,
                                 trajectory_msi, update_shared_norm)

SPEC = MirrorSpec.reduced()


@pytest.mark.parametrize("spec", [MirrorSpec.reduced(), MirrorSpec.paper_layout()])
def test_involution_exact(spec):
    rng = np.random.default_rng(0)
    s = rng.normal(size=(100, spec.obs_dim))
    a = rng.normal(size=(100, spec.act_dim))
    np.testing.assert_array_equal(mirror_state(mirror_state(s, spec), spec), s)
    np.testing.assert_array_equal(mirror_action(mirror_action(a, spec), spec), a)


def test_paper_layout_dimensions():
    spec = MirrorSpec.paper_layout()
    assert (spec.obs_dim, spec.act_dim) == (38, 27)
    # left and right hip pitch swap, torso roll flips, height stays
    assert spec.obs_perm[3] == 13 and spec.obs_sign[3] == 1
    assert spec.obs_sign[37] == -1 and spec.obs_sign[35] == 1
    # gains and step duration are unchanged
    np.testing.assert_array_equal(spec.act_perm[21:], np.arange(21, 27))
    np.testing.assert_array_equal(spec.act_sign[21:], 1)


def test_invalid_mirror_rejected():
    with pytest.raises(ValueError):
        MirrorSpec(np.array([1, 2, 0]), np.ones(3), np.arange(2), np.ones(2))  # not an involution
    with pytest.raises(ValueError):
        MirrorSpec(np.array([1, 0]), np.array([1.0, -1.0]), np.arange(2), np.ones(2))  # signs disagree in pair
    with pytest.raises(ValueError):
        mirror_state(np.zeros(5), SPEC)


def _random_states(n_snap=130, seed=0):
    """Kernel rows visited by random-action rollouts under pushes, with their push tables."""
    cfg = ControlConfig()
    env = VecEnv(8, ScenarioSpec.named("l1", push_interval=(0.4, 0.6)), seed=seed, cap=50.0)
    env.reset()
    bounds = ActionBounds.from_control(cfg)
    rng = np.random.default_rng(seed)
    snaps = []
    for _ in range(n_snap):
        snaps.append((env.states.copy(), env.push_t.copy(), env.push_fx.copy(), env.push_fy.copy(),
                      env.terrain.copy(), env.tilt_r.copy()))
        env.step(bounds.squash(rng.normal(0, 0.7, (8, K.ACT_DIM))))
    return env, snaps


def test_flat_ground_transition_symmetry():
    """step(f(s), g(a)) == f(step(s, a)) with mirrored disturbances, 1000 random pairs."""
    env, snaps = _random_states()
    bounds = ActionBounds.from_control(ControlConfig())
    rng = np.random.default_rng(1)
    worst = 0.0
    checked = 0
    while checked < 1000:
        states, pt, pfx, pfy, terr, tilt = snaps[rng.integers(len(snaps))]
        i = rng.integers(8)
        row = states[i].copy()
        if row[K.S_STATUS] != K.STATUS_ALIVE:
            continue
        a = bounds.squash(rng.normal(0, 0.7, K.ACT_DIM))
        cmd = np.zeros(K.CMD_DIM)
        s1 = row.copy()
        K.env_step(s1, a, env.prm, env.ctl, pt[i], pfx[i], pfy[i], tilt[i], terr[i], cmd)
        s2 = mirror_row(row)
        K.env_step(s2, mirror_action(a, SPEC), env.prm, env.ctl, pt[i], pfx[i], -pfy[i], tilt[i], terr[i], cmd)
        worst = max(worst, float(np.max(np.abs(mirror_row(s1) - s2))))
        o1, o2 = np.zeros(K.OBS_DIM), np.zeros(K.OBS_DIM)
        K.observe(s1, o1)
        K.observe(s2, o2)
        np.testing.assert_allclose(mirror_state(o1, SPEC), o2, atol=1e-6, rtol=0)
        checked += 1
    assert worst < 1e-6


def test_reward_symmetry_exact():
    rng = np.random.default_rng(2)
    env = VecEnv(1, ScenarioSpec(), seed=0)
    bounds = ActionBounds.from_control(ControlConfig())
    a = bounds.squash(rng.normal(size=(1000, K.ACT_DIM)))
    env.n_envs = 1000  # reward() is stateless apart from S
    np.testing.assert_array_equal(env.reward(a), env.reward(mirror_action(a, SPEC)))


def test_plant_mirror_matches_observation_mirror():
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = PlantState(rng.normal(size=3), rng.normal(size=3), rng.normal(size=2), rng.normal(size=2),
                       rng.normal(size=3), rng.normal(size=3), rng.choice([-1, 1]), rng.normal(size=2),
                       rng.uniform(0, 0.5))
        np.testing.assert_array_equal(build_observation(mirror_plant_state(s), 0.5),
                                      mirror_state(build_observation(s, 0.5), SPEC))


def test_msi_properties():
    rng = np.random.default_rng(4)
    d = rng.normal(size=8)
    assert msi(d, d) == 0.0
    assert msi(d, -d) == 2.0
    assert msi(np.zeros(8), np.zeros(8)) == 0.0
    for _ in range(1000):
        x, y = rng.normal(size=(2, 8)) * rng.uniform(0, 3, (2, 1))
        assert 0.0 <= msi(x, y) <= 2.0
    x, y = rng.normal(size=(2, 50, 8))
    np.testing.assert_allclose(msi_rows(x, y), [msi(a, b) for a, b in zip(x, y)], rtol=1e-15)
    with pytest.raises(ValueError):
        msi(np.zeros(3), np.zeros(4))


def test_trajectory_msi_of_equivariant_policy_is_zero():
    rng = np.random.default_rng(5)
    M = rng.normal(size=(K.OBS_DIM, K.ACT_DIM))
    # project onto equivariant maps: g(pi(f(s))) = pi(s)
    P = np.diag(SPEC.obs_sign) @ M @ np.diag(SPEC.act_sign)
    M_eq = 0.5 * (M + P)
    states = rng.normal(size=(200, K.OBS_DIM))
    assert trajectory_msi(lambda s: s @ M_eq, states, SPEC) == pytest.approx(0.0, abs=1e-12)
    assert trajectory_msi(lambda s: s @ M, states, SPEC) > 0.1
    # a zero-residual controller reports zero by convention
    assert trajectory_msi(lambda s: np.zeros((len(s), K.ACT_DIM)), states, SPEC) == 0.0


def _samples(n):
    return [Sample(np.full(K.OBS_DIM, float(k)), np.full(K.ACT_DIM, float(k)), float(k), 10.0 + k)
            for k in range(1, n + 1)]


def test_augment_batch_half_layout():
    W = _samples(4)
    out = augment_batch(W, Fraction(1, 2), SPEC)
    assert len(out) == 6
    expected = [("W", 1), ("W", 2), ("u", 2), ("W", 3), ("W", 4), ("u", 4)]
    for s, (kind, k) in zip(out, expected):
        if kind == "W":
            assert s is W[k - 1]
        else:
            np.testing.assert_array_equal(s.S, mirror_state(W[k - 1].S, SPEC))
            np.testing.assert_array_equal(s.A, mirror_action(W[k - 1].A, SPEC))
            assert (s.Ad, s.V) == (W[k - 1].Ad, W[k - 1].V)


@pytest.mark.parametrize("ratio", [Fraction(0), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), Fraction(1)])
def test_augmentation_count_exact(ratio):
    n = 8192
    mask = augmentation_mask(n, ratio)
    assert Fraction(int(mask.sum()), n) == ratio
    obs = np.random.default_rng(6).normal(size=(n, K.OBS_DIM))
    act = np.random.default_rng(7).normal(size=(n, K.ACT_DIM))
    adv = np.arange(n, dtype=float)
    o2, a2, adv2 = augment_arrays(obs, act, ratio, SPEC, adv)
    assert len(o2) == n + int(mask.sum())
    # array form agrees with the list form
    W = [Sample(obs[k], act[k], adv[k], 0.0) for k in range(64)]
    ref = augment_batch(W, ratio, SPEC)
    o3, a3, adv3 = augment_arrays(obs[:64], act[:64], ratio, SPEC, adv[:64])
    np.testing.assert_array_equal(o3, [s.S for s in ref])
    np.testing.assert_array_equal(a3, [s.A for s in ref])
    np.testing.assert_array_equal(adv3, [s.Ad for s in ref])


def test_ratio_half_gives_one_and_a_half_gradient_samples():
    n = 8192
    obs = np.zeros((n, K.OBS_DIM))
    out = augment_arrays(obs, np.zeros((n, K.ACT_DIM)), Fraction(1, 2), SPEC)
    assert len(out[0]) == 3 * n // 2


def test_bad_ratio():
    with pytest.raises(ValueError):
        augmentation_mask(4, Fraction(3, 2))
    with pytest.raises(ValueError):
        augmentation_mask(4, -0.5)


def test_shared_norm_is_symmetric():
    rng = np.random.default_rng(8)
    st = SharedNormStats(K.OBS_DIM, SPEC)
    for _ in range(5):
        update_shared_norm(st, rng.normal(0.3, 2.0, (500, K.OBS_DIM)))
    x = rng.normal(size=(100, K.OBS_DIM))
    np.testing.assert_array_equal(st.normalize(mirror_state(x, SPEC)), mirror_state(st.normalize(x), SPEC))
    flipped = list(SPEC.obs_sign < 0)
    np.testing.assert_array_equal(st.mean[flipped], 0.0)


def test_shared_norm_matches_batch_statistics():
    rng = np.random.default_rng(9)
    chunks = [rng.normal(1.0, 3.0, (n, K.OBS_DIM)) for n in (10, 300, 77)]
    st = SharedNormStats(K.OBS_DIM, SPEC)
    plain = SharedNormStats(K.OBS_DIM)
    for c in chunks:
        update_shared_norm(st, c)
        update_shared_norm(plain, c)
    allx = np.concatenate(chunks)
    np.testing.assert_allclose(plain.mean, allx.mean(0), rtol=1e-12)
    np.testing.assert_allclose(plain.var, allx.var(0), rtol=1e-10)
    both = np.concatenate([allx, mirror_state(allx, SPEC)])
    np.testing.assert_allclose(st.mean, both.mean(0), atol=1e-12)
    np.testing.assert_allclose(st.var, both.var(0), rtol=1e-10)
    assert st.count == 2 * len(allx)


def test_trajectory_msi_scale_is_unit_free():
    rng = np.random.default_rng(10)
    M = rng.normal(size=(K.OBS_DIM, K.ACT_DIM))
    states = rng.normal(size=(50, K.OBS_DIM))
    S = ControlConfig().S
    # rescaling the residual units together with S leaves the index unchanged
    k = np.r_[np.full(8, 7.0), np.ones(4)]
    a = trajectory_msi(lambda s: s @ M, states, SPEC, scale=S)
    b = trajectory_msi(lambda s: (s @ M) * k, states, SPEC, scale=S * 7.0)
    assert a == pytest.approx(b, rel=1e-12)
