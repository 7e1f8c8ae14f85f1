"""Sagittal reflection of observations and actions, partial augmentation, MSI.

A :class:`MirrorSpec` is a permutation plus a sign per index.  Paired entries
(left/right copies) swap places; singletons either stay or flip sign.  The
reduced plant is described entirely by singletons since its observation is
support-relative and carries the support side explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels as K

# reduced-plant sign tables (see plant.OBS_NAMES and control.RESIDUAL_NAMES)
REDUCED_OBS_FLIP = (1, 4, 7, 9, 11, 13, 15)
REDUCED_ACT_FLIP = (1, 3, 5)


def _validate_involution(perm: np.ndarray, sign: np.ndarray, what: str) -> None:
    n = perm.shape[0]
    if sign.shape != (n,):
        raise ValueError(f"{what}: sign table length {sign.shape[0]} != permutation length {n}")
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError(f"{what}: not a permutation")
    if not np.all(np.abs(sign) == 1):
        raise ValueError(f"{what}: signs must be +1 or -1")
    if not np.array_equal(perm[perm], np.arange(n)):
        raise ValueError(f"{what}: permutation is not an involution")
    if not np.all(sign * sign[perm] == 1):
        raise ValueError(f"{what}: paired entries need matching signs")


@dataclass(frozen=True)
class MirrorSpec:
    obs_perm: np.ndarray
    obs_sign: np.ndarray
    act_perm: np.ndarray
    act_sign: np.ndarray

    def __post_init__(self):
        for name, dtype in (("obs_perm", np.int64), ("obs_sign", np.float64),
                            ("act_perm", np.int64), ("act_sign", np.float64)):
            arr = np.asarray(getattr(self, name), dtype=dtype).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _validate_involution(self.obs_perm, self.obs_sign, "observation mirror")
        _validate_involution(self.act_perm, self.act_sign, "action mirror")

    @property
    def obs_dim(self) -> int:
        return self.obs_perm.shape[0]

    @property
    def act_dim(self) -> int:
        return self.act_perm.shape[0]

    @classmethod
    def from_tables(cls, obs_dim: int, act_dim: int, obs_pairs=(), obs_flip=(), act_pairs=(),
                    act_flip=()) -> "MirrorSpec":
        """Build from pair lists ``(i, j)`` and flip lists.

        A flipped pair member is listed in ``*_flip`` for both of its entries.
        """
        def build(n, pairs, flip):
            perm = np.arange(n)
            for i, j in pairs:
                perm[i], perm[j] = j, i
            sign = np.ones(n)
            sign[list(flip)] = -1.0
            return perm, sign

        op, os_ = build(obs_dim, obs_pairs, obs_flip)
        ap, as_ = build(act_dim, act_pairs, act_flip)
        return cls(op, os_, ap, as_)

    @classmethod
    def reduced(cls) -> "MirrorSpec":
        return cls.from_tables(K.OBS_DIM, K.ACT_DIM, obs_flip=REDUCED_OBS_FLIP, act_flip=REDUCED_ACT_FLIP)

    @classmethod
    def paper_layout(cls) -> "MirrorSpec":
        """The articulated robot's 38-input / 27-output layout.

        Observations: per side 10 joints (shoulder p/r/y, hip p/r/y, ankle p/r,
        knee, elbow), waist p/r/y, per foot CoP x/y and force, torso linear
        and angular velocity, height, pitch, roll.  Actions: per side 6 leg and
        3 shoulder residuals, 3 waist residuals, step duration, COM height,
        K_phi (2) and K_zeta (2).
        """
        joints = ("shoulder_p", "shoulder_r", "shoulder_y", "hip_p", "hip_r", "hip_y",
                  "ankle_p", "ankle_r", "knee", "elbow")
        lateral = {"shoulder_r", "shoulder_y", "hip_r", "hip_y", "ankle_r"}
        obs_pairs, obs_flip = [], []
        for k, name in enumerate(joints):
            i, j = k, k + 10
            obs_pairs.append((i, j))
            if name in lateral:
                obs_flip += [i, j]
        # waist p/r/y at 20..22
        obs_flip += [21, 22]
        # CoP x, CoP y, force per foot at 23..25 / 26..28
        obs_pairs += [(23, 26), (24, 27), (25, 28)]
        obs_flip += [24, 27]
        # torso: vx vy vz wx wy wz height pitch roll at 29..37
        obs_flip += [30, 32, 34, 37]

        leg = ("hip_p", "hip_r", "hip_y", "knee", "ankle_p", "ankle_r", "shoulder_p", "shoulder_r", "shoulder_y")
        act_pairs, act_flip = [], []
        for k, name in enumerate(leg):
            i, j = k, k + 9
            act_pairs.append((i, j))
            if name in lateral:
                act_flip += [i, j]
        # waist 18..20; step duration 21, COM height 22, gains 23..26 unchanged
        act_flip += [19, 20]
        return cls.from_tables(38, 27, obs_pairs, obs_flip, act_pairs, act_flip)

    def to_dict(self) -> dict:
        return {"obs_perm": self.obs_perm.tolist(), "obs_sign": self.obs_sign.tolist(),
                "act_perm": self.act_perm.tolist(), "act_sign": self.act_sign.tolist()}


def mirror_state(obs: np.ndarray, spec: MirrorSpec) -> np.ndarray:
    """``out[..., i] = sign[i] * obs[..., perm[i]]``; works on single rows or batches."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != spec.obs_dim:
        raise ValueError(f"observation has {obs.shape[-1]} entries, mirror expects {spec.obs_dim}")
    return np.ascontiguousarray(spec.obs_sign * obs[..., spec.obs_perm])


def mirror_action(act: np.ndarray, spec: MirrorSpec) -> np.ndarray:
    act = np.asarray(act, dtype=np.float64)
    if act.shape[-1] != spec.act_dim:
        raise ValueError(f"action has {act.shape[-1]} entries, mirror expects {spec.act_dim}")
    return np.ascontiguousarray(spec.act_sign * act[..., spec.act_perm])


@dataclass(frozen=True)
class Sample:
    S: np.ndarray
    A: np.ndarray
    Ad: float
    V: float


def _as_fraction(ratio) -> Fraction:
    r = Fraction(ratio).limit_denominator(1 << 20) if isinstance(ratio, float) else Fraction(ratio)
    if not 0 <= r <= 1:
        raise ValueError(f"symmetry ratio must lie in [0, 1], got {ratio}")
    return r


def augmentation_mask(n: int, ratio) -> np.ndarray:
    """True at original index i (0-based) if a mirrored copy follows it.

    A copy follows the k-th sample (1-based) when floor(k r) steps up, which
    yields exactly floor(n r) copies and spreads them evenly.
    """
    r = _as_fraction(ratio)
    k = np.arange(1, n + 1, dtype=object)
    hi = np.array([(x * r.numerator) // r.denominator for x in k], dtype=np.int64)
    lo = np.array([((x - 1) * r.numerator) // r.denominator for x in k], dtype=np.int64)
    return hi > lo


def augment_batch(samples: Sequence[Sample], ratio, spec: MirrorSpec) -> list[Sample]:
    mask = augmentation_mask(len(samples), ratio)
    out = []
    for s, m in zip(samples, mask):
        out.append(s)
        if m:
            out.append(Sample(mirror_state(s.S, spec), mirror_action(s.A, spec), s.Ad, s.V))
    return out


def augment_arrays(obs: np.ndarray, act: np.ndarray, ratio, spec: MirrorSpec, *extra: np.ndarray):
    """Array form of :func:`augment_batch`; ``extra`` arrays (advantages, targets) are copied as-is."""
    n = obs.shape[0]
    mask = augmentation_mask(n, ratio)
    src = np.flatnonzero(mask)
    if src.size == 0:
        return (obs, act, *extra)
    # position of each original and of each copy in the interleaved output
    shift = np.concatenate([[0], np.cumsum(mask)[:-1]])
    orig_pos = np.arange(n) + shift
    copy_pos = orig_pos[src] + 1
    total = n + src.size

    def interleave(a, mirrored):
        out = np.empty((total,) + a.shape[1:], dtype=a.dtype)
        out[orig_pos] = a
        out[copy_pos] = mirrored
        return out

    outs = [interleave(obs, mirror_state(obs[src], spec)), interleave(act, mirror_action(act[src], spec))]
    outs += [interleave(e, e[src]) for e in extra]
    return tuple(outs)


@dataclass
class SharedNormStats:
    """Running observation mean/variance.

    With a mirror attached every update also folds in the mirrored batch and
    the reported statistics are symmetrized, so paired entries agree exactly.
    """

    dim: int
    mirror: MirrorSpec | None = None
    count: float = 0.0
    mean_raw: np.ndarray = None
    m2_raw: np.ndarray = None
    eps: float = 1e-8

    def __post_init__(self):
        if self.mean_raw is None:
            self.mean_raw = np.zeros(self.dim)
        if self.m2_raw is None:
            self.m2_raw = np.zeros(self.dim)
        if self.mirror is not None and self.mirror.obs_dim != self.dim:
            raise ValueError("mirror dimension does not match the statistics")

    def merge(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        tot = self.count + n
        delta = b_mean - self.mean_raw
        self.mean_raw = self.mean_raw + delta * (n / tot)
        self.m2_raw = self.m2_raw + b_m2 + delta**2 * (self.count * n / tot)
        self.count = tot

    def _sym(self, v: np.ndarray) -> np.ndarray:
        if self.mirror is None:
            return v
        return 0.5 * (v + self.mirror.obs_sign * v[self.mirror.obs_perm])

    @property
    def mean(self) -> np.ndarray:
        return self._sym(self.mean_raw)

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        v = self.m2_raw / self.count
        if self.mirror is None:
            return v
        # variances pair up without sign; symmetrize as (v_i + v_perm(i)) / 2
        return 0.5 * (v + v[self.mirror.obs_perm])

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var + self.eps)

    def normalize(self, obs: np.ndarray, clip: float = 10.0) -> np.ndarray:
        return np.clip((obs - self.mean) / self.std, -clip, clip)


def update_shared_norm(stats: SharedNormStats, obs: np.ndarray) -> SharedNormStats:
    """Fold ``obs`` (and its mirror, when the statistics are shared) into ``stats``."""
    obs = np.asarray(obs, dtype=np.float64).reshape(-1, stats.dim)
    if stats.mirror is not None:
        obs = np.concatenate([obs, mirror_state(obs, stats.mirror)])
    stats.merge(obs)
    return stats


def msi(delta, delta_prime) -> float:
    d = np.asarray(delta, dtype=np.float64)
    dp = np.asarray(delta_prime, dtype=np.float64)
    if d.shape != dp.shape:
        raise ValueError("residual vectors differ in dimension")
    denom = 0.5 * (np.abs(d).sum() + np.abs(dp).sum())
    if denom == 0.0:
        return 0.0
    # bounded by 2 by the triangle inequality; clip the rounding excess
    return float(min(np.abs(d - dp).sum() / denom, 2.0))


def msi_rows(delta: np.ndarray, delta_prime: np.ndarray) -> np.ndarray:
    """Row-wise :func:`msi` for two ``(n, k)`` residual batches."""
    d = np.atleast_2d(np.asarray(delta, dtype=np.float64))
    dp = np.atleast_2d(np.asarray(delta_prime, dtype=np.float64))
    if d.shape != dp.shape:
        raise ValueError("residual batches differ in shape")
    denom = 0.5 * (np.abs(d).sum(axis=1) + np.abs(dp).sum(axis=1))
    num = np.abs(d - dp).sum(axis=1)
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, np.minimum(num / safe, 2.0), 0.0)


def trajectory_msi(policy: Callable[[np.ndarray], np.ndarray], states: np.ndarray, spec: MirrorSpec,
                   n_residuals: int = K.N_RESIDUALS, scale: Optional[np.ndarray] = None) -> float:
    """Mean MSI over a trajectory of raw observations.

    ``policy`` maps a batch of observations to deterministic physical actions.
    The mirrored-state action is mapped back through the action mirror before
    comparing residual parts.  Residuals are divided by ``scale`` (the
    saturation vector S) first, so entries in different units weigh alike.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("trajectory must be a non-empty 2D array of observations")
    a = policy(states)
    a_m = mirror_action(policy(mirror_state(states, spec)), spec)
    w = np.ones(n_residuals) if scale is None else 1.0 / np.asarray(scale, dtype=np.float64)
    return float(np.mean(msi_rows(a[:, :n_residuals] * w, a_m[:, :n_residuals] * w)))


def mirror_row(row: np.ndarray) -> np.ndarray:
    """Reflect a full kernel state row (plant plus bookkeeping) through the x-z plane."""
    out = np.array(row, dtype=np.float64, copy=True)
    for i in (K.S_CY, K.S_VY, K.S_PHI_R, K.S_DPHI_R, K.S_SUP_Y, K.S_SW_Y, K.S_SIDE, K.S_ZMP_Y,
              K.S_LIFT_Y, K.S_NEXT_Y, K.S_TGT_Y, K.S_PLAN_C0Y, K.S_TQ_R, K.S_TILT0_X, K.S_TILT1_X):
        out[..., i] = -out[..., i]
    return out
