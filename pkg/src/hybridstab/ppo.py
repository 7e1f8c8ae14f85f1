"""Actor-critic PPO written directly in numpy.

The actor is a tanh MLP producing the pre-squash mean ``mu`` of a diagonal
Gaussian with a state-independent log-std.  Physical actions are
``center + half * tanh(u)``: residuals are centred on zero with half-range
``S`` (an odd map, so sign-flip mirrors commute with it) and gains span their
configured interval.  Log-probabilities live in ``u`` space, where the
squashing Jacobian cancels in the PPO ratio.
"""

from __future__ import annotations

import io
import math
import struct
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels as K
from .symmetry import SharedNormStats

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8192
    lr0: float = 3e-4
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 4
    minibatch: int = 512
    total_steps: int = 2_000_000
    ratio: Fraction = Fraction(0)
    seed: int = 0
    vf_coef: float = 0.5
    ent_coef: float = 0.003
    max_grad_norm: float = math.inf  # per parameter group; inf disables clipping
    log_std_init: float = -1.0
    hidden: tuple = (64, 64)
    n_envs: int = 8
    adam_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "ratio", Fraction(self.ratio))
        if self.batch_size <= 0 or self.minibatch <= 0 or self.epochs <= 0:
            raise ValueError("batch, minibatch and epochs must be positive")
        if not 0 <= self.ratio <= 1:
            raise ValueError(f"symmetry ratio must lie in [0, 1], got {self.ratio}")
        if not 0 < self.clip < 1:
            raise ValueError(f"clip epsilon must lie in (0, 1), got {self.clip}")
        if not (0 < self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma must lie in (0, 1] and lambda in [0, 1]")
        if self.batch_size % self.n_envs:
            raise ValueError("batch_size must be a multiple of n_envs")


def linear_lr(lr0: float, step: int, total_steps: int) -> float:
    return lr0 * (1.0 - step / total_steps) if step < total_steps else 0.0


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------
def layer_shapes(obs_dim: int, act_dim: int, hidden=(64, 64)) -> list[tuple[str, tuple]]:
    sizes = [obs_dim, *hidden]
    shapes = []
    for prefix, out in (("pi", act_dim), ("v", 1)):
        for k in range(len(hidden)):
            shapes += [(f"{prefix}_W{k}", (sizes[k], sizes[k + 1])), (f"{prefix}_b{k}", (sizes[k + 1],))]
        shapes += [(f"{prefix}_Wout", (sizes[-1], out)), (f"{prefix}_bout", (out,))]
    shapes.append(("log_std", (act_dim,)))
    return shapes


class PolicyParams:
    """All weights live in one flat vector; ``self.p[name]`` are views into it."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), flat: Optional[np.ndarray] = None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.shapes = layer_shapes(obs_dim, act_dim, self.hidden)
        n = sum(int(np.prod(s)) for _, s in self.shapes)
        self.flat = np.zeros(n) if flat is None else np.array(flat, dtype=np.float64)
        if self.flat.shape != (n,):
            raise ValueError(f"parameter vector has {self.flat.size} entries, expected {n}")
        self.p = self._views(self.flat)

    def _views(self, flat):
        out, k = {}, 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            out[name] = flat[k:k + size].reshape(shape)
            k += size
        return out

    def groups(self) -> list[slice]:
        """Flat-vector slices of the actor (including log-std) and the critic."""
        actor, critic, k = [], [], 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            (critic if name.startswith("v_") else actor).append((k, k + size))
            k += size
        # layer order is pi..., v..., log_std
        return [np.r_[tuple(slice(a, b) for a, b in actor)], np.r_[tuple(slice(a, b) for a, b in critic)]]

    def views(self, flat: np.ndarray) -> dict:
        return self._views(flat)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.obs_dim, self.act_dim, self.hidden, self.flat.copy())

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, rng: np.random.Generator, hidden=(64, 64),
             log_std: float = -1.0) -> "PolicyParams":
        """Orthogonal init; small actor output so the first policy stays near the baseline."""
        params = cls(obs_dim, act_dim, hidden)
        for name, shape in params.shapes:
            if name.startswith(("pi_W", "v_W")):
                gain = math.sqrt(2.0)
                if name == "pi_Wout":
                    gain = 0.01
                elif name == "v_Wout":
                    gain = 1.0
                params.p[name][...] = _orthogonal(rng, shape, gain)
        params.p["log_std"][...] = log_std
        return params


def _orthogonal(rng, shape, gain):
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


@dataclass(frozen=True)
class ActionBounds:
    """Physical action = center + half * tanh(u)."""

    center: np.ndarray
    half: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half, dtype=np.float64)
        if c.shape != h.shape or np.any(h <= 0):
            raise ValueError("action bounds need matching shapes and positive half-ranges")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half", h)

    @classmethod
    def from_control(cls, cfg) -> "ActionBounds":
        return cls(np.concatenate([np.zeros(K.N_RESIDUALS), cfg.gain_center()]),
                   np.concatenate([cfg.S, cfg.gain_half()]))

    @classmethod
    def symmetric(cls, dim: int, half=1.0) -> "ActionBounds":
        return cls(np.zeros(dim), np.full(dim, float(half)))

    def squash(self, u: np.ndarray) -> np.ndarray:
        return self.center + self.half * np.tanh(u)

    def unsquash(self, a: np.ndarray) -> np.ndarray:
        return np.arctanh(np.clip((a - self.center) / self.half, -1 + 1e-12, 1 - 1e-12))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------
def _mlp(p, prefix, x, n_hidden):
    acts = [x]
    h = x
    for k in range(n_hidden):
        h = np.tanh(h @ p[f"{prefix}_W{k}"] + p[f"{prefix}_b{k}"])
        acts.append(h)
    return h @ p[f"{prefix}_Wout"] + p[f"{prefix}_bout"], acts


def _mlp_backward(p, g, prefix, acts, d_out, n_hidden):
    g[f"{prefix}_Wout"] += acts[-1].T @ d_out
    g[f"{prefix}_bout"] += d_out.sum(axis=0)
    d = d_out @ p[f"{prefix}_Wout"].T
    for k in range(n_hidden - 1, -1, -1):
        d = d * (1.0 - acts[k + 1] ** 2)
        g[f"{prefix}_W{k}"] += acts[k].T @ d
        g[f"{prefix}_b{k}"] += d.sum(axis=0)
        if k:
            d = d @ p[f"{prefix}_W{k}"].T


def policy_forward(params: PolicyParams, obs_normalized: np.ndarray):
    """Return ``(mu, log_std, value)``; ``mu`` is the pre-squash mean."""
    x = np.asarray(obs_normalized, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.obs_dim:
        raise ValueError(f"observation has {x.shape[1]} entries, network expects {params.obs_dim}")
    n_h = len(params.hidden)
    mu, _ = _mlp(params.p, "pi", x, n_h)
    v, _ = _mlp(params.p, "v", x, n_h)
    v = v[:, 0]
    if single:
        return mu[0], params.p["log_std"].copy(), float(v[0])
    return mu, params.p["log_std"].copy(), v


def gaussian_logp(u, mu, log_std):
    z = (u - mu) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * LOG_2PI * mu.shape[-1]


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std) + 0.5 * (1.0 + LOG_2PI) * log_std.shape[-1])


@dataclass
class LossStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_frac: float = 0.0
    grad_norm: float = 0.0
    lr: float = 0.0


def ppo_loss_and_grad(params: PolicyParams, obs, u, logp_old, adv, ret, clip: float, vf_coef: float,
                      ent_coef: float):
    """Total loss ``-surrogate + vf_coef * mse - ent_coef * entropy`` and its exact gradient."""
    p = params.p
    n_h = len(params.hidden)
    n = obs.shape[0]
    mu, a_acts = _mlp(p, "pi", obs, n_h)
    v, v_acts = _mlp(p, "v", obs, n_h)
    v = v[:, 0]
    log_std = p["log_std"]
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mu
    logp = -0.5 * np.sum(diff * diff * inv_var, axis=1) - np.sum(log_std) - 0.5 * LOG_2PI * mu.shape[1]
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    surr = np.minimum(unclipped, clipped)
    use = unclipped <= clipped
    pi_loss = -surr.mean()
    v_err = v - ret
    v_loss = np.mean(v_err**2)
    ent = gaussian_entropy(log_std)
    total = pi_loss + vf_coef * v_loss - ent_coef * ent

    g_flat = np.zeros_like(params.flat)
    g = params.views(g_flat)
    d_logp = np.where(use, -unclipped, 0.0) / n  # d(pi_loss)/d(logp)
    d_mu = d_logp[:, None] * diff * inv_var
    g["log_std"] += (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - ent_coef
    _mlp_backward(p, g, "pi", a_acts, d_mu, n_h)
    d_v = (2.0 * vf_coef / n) * v_err
    _mlp_backward(p, g, "v", v_acts, d_v[:, None], n_h)

    stats = LossStats(
        policy_loss=float(pi_loss), value_loss=float(v_loss), entropy=ent,
        approx_kl=float(np.mean(logp_old - logp)),
        clip_frac=float(np.mean(np.abs(ratio - 1.0) > clip)),
    )
    return float(total), g_flat, stats


class Adam:
    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-5):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, flat: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        flat -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Batch:
    obs: np.ndarray  # normalized
    u: np.ndarray  # pre-squash actions
    adv: np.ndarray
    ret: np.ndarray
    logp_old: Optional[np.ndarray] = None


def ppo_update(params: PolicyParams, batch: Batch, config: TrainConfig, opt: Adam, lr: float,
               rng: np.random.Generator) -> LossStats:
    """Epochs of shuffled minibatch steps; updates ``params`` in place."""
    n = batch.obs.shape[0]
    if batch.logp_old is None:
        mu, log_std, _ = policy_forward(params, batch.obs)
        batch.logp_old = gaussian_logp(batch.u, mu, log_std)
    adv = (batch.adv - batch.adv.mean()) / (batch.adv.std() + 1e-8)
    acc = LossStats(lr=lr)
    count = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start:start + config.minibatch]
            loss, grad, st = ppo_loss_and_grad(params, batch.obs[idx], batch.u[idx], batch.logp_old[idx], adv[idx],
                                               batch.ret[idx], config.clip, config.vf_coef, config.ent_coef)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise FloatingPointError(
                    f"non-finite PPO loss {loss} (policy {st.policy_loss}, value {st.value_loss})")
            # optional clipping, per group so the value gradient (which scales
            # with the returns) cannot crowd out the policy step
            gnorm = 0.0
            for sl in params.groups():
                n_g = float(np.linalg.norm(grad[sl]))
                gnorm = max(gnorm, n_g)
                if n_g > config.max_grad_norm:
                    grad[sl] *= config.max_grad_norm / n_g
            opt.step(params.flat, grad, lr)
            for f in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac"):
                setattr(acc, f, getattr(acc, f) + getattr(st, f))
            acc.grad_norm += gnorm
            count += 1
    for f in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac", "grad_norm"):
        setattr(acc, f, getattr(acc, f) / count)
    return acc


# ---------------------------------------------------------------------------
# returns
# ---------------------------------------------------------------------------
def reward(residual, S) -> float:
    """1 - NNI: only the residual part enters, never the gains."""
    delta = residual.delta if hasattr(residual, "delta") else np.asarray(residual, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if delta.shape != S.shape:
        raise ValueError("residual and saturation vectors differ in length")
    acc = 0.0
    for d, s in zip(np.abs(delta), S):
        acc += d / s
    return float(1.0 - acc / len(S))


def gae_advantages(rewards, values, next_values, terminal, boundary=None, gamma=0.99, lam=0.95) -> np.ndarray:
    """GAE over a flat time-ordered buffer (see :func:`kernels.gae`).

    ``next_values[t]`` must hold the bootstrap value for truncated segment ends.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=np.bool_)
    boundary = terminal.copy() if boundary is None else np.asarray(boundary, dtype=np.bool_)
    return K.gae(rewards, np.asarray(values, np.float64), np.asarray(next_values, np.float64),
                 terminal, boundary | terminal, gamma, lam)


def lambda_returns(rewards, values, next_values, terminal, boundary=None, gamma=0.99, lam=0.95) -> np.ndarray:
    return gae_advantages(rewards, values, next_values, terminal, boundary, gamma, lam) + np.asarray(values)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
MAGIC = b"HSTBCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIQqq")  # magic, version, obs, act, n_hidden, seed, ratio num, ratio den


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: PolicyParams
    stats: SharedNormStats
    bounds: ActionBounds
    seed: int = 0
    ratio: Fraction = Fraction(0)
    steps: int = 0


def save_checkpoint(params: PolicyParams, stats: SharedNormStats, bounds: ActionBounds, path, *, seed: int = 0,
                    ratio=Fraction(0), steps: int = 0) -> None:
    """Write the documented binary layout (see README, "Checkpoint format")."""
    ratio = Fraction(ratio)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, params.obs_dim, params.act_dim, len(params.hidden),
                           seed, ratio.numerator, ratio.denominator))
    buf.write(struct.pack(f"<{len(params.hidden)}I", *params.hidden))
    buf.write(struct.pack("<Q", steps))
    buf.write(params.flat.astype("<f8").tobytes())
    shared = stats.mirror is not None
    buf.write(struct.pack("<Bd", int(shared), stats.count))
    buf.write(stats.mean_raw.astype("<f8").tobytes())
    buf.write(stats.m2_raw.astype("<f8").tobytes())
    if shared:
        buf.write(stats.mirror.obs_perm.astype("<i8").tobytes())
        buf.write(stats.mirror.obs_sign.astype("<f8").tobytes())
        buf.write(stats.mirror.act_perm.astype("<i8").tobytes())
        buf.write(stats.mirror.act_sign.astype("<f8").tobytes())
    buf.write(bounds.center.astype("<f8").tobytes())
    buf.write(bounds.half.astype("<f8").tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path, expect_obs: Optional[int] = None, expect_act: Optional[int] = None) -> Checkpoint:
    from .symmetry import MirrorSpec

    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise CheckpointError("checkpoint file is truncated")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    magic, version, obs_dim, act_dim, n_hidden, seed, num, den = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint is truncated or corrupted (checksum mismatch)")
    if expect_obs is not None and obs_dim != expect_obs or expect_act is not None and act_dim != expect_act:
        raise CheckpointError(f"checkpoint dimensions {obs_dim}/{act_dim} do not match {expect_obs}/{expect_act}")
    off = _HEADER.size

    def take(fmt_or_n, dtype=None):
        nonlocal off
        if dtype is None:
            s = struct.Struct(fmt_or_n)
            vals = s.unpack_from(body, off)
            off += s.size
            return vals
        arr = np.frombuffer(body, dtype=dtype, count=fmt_or_n, offset=off).astype(np.float64 if dtype == "<f8" else np.int64)
        off += fmt_or_n * 8
        return arr

    hidden = take(f"<{n_hidden}I")
    (steps,) = take("<Q")
    params = PolicyParams(obs_dim, act_dim, hidden)
    params.flat[...] = take(params.flat.size, "<f8")
    shared, count = take("<Bd")
    mean_raw = take(obs_dim, "<f8")
    m2_raw = take(obs_dim, "<f8")
    mirror = None
    if shared:
        mirror = MirrorSpec(take(obs_dim, "<i8"), take(obs_dim, "<f8"), take(act_dim, "<i8"), take(act_dim, "<f8"))
    bounds = ActionBounds(take(act_dim, "<f8"), take(act_dim, "<f8"))
    if off != len(body):
        raise CheckpointError("checkpoint has trailing bytes")
    stats = SharedNormStats(obs_dim, mirror, count, mean_raw, m2_raw)
    return Checkpoint(params, stats, bounds, seed, Fraction(num, den), steps)
