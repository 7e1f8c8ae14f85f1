"""Closed-loop tracking: torso regulation, DCM tracker, ZMP saturation, stepping.

The functions here are the readable, per-call form of the controller.  The
batched environment runs the fused kernel in :func:`hybridstab.kernels.control`,
and the tests hold the two to the same result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .lip import PendulumModel, capture_step

RESIDUAL_NAMES = ("zmp_x", "zmp_y", "torque_pitch", "torque_roll", "step_x", "step_y", "com_height", "step_time")
GAIN_NAMES = ("k_phi_pitch", "k_phi_roll", "k_zeta_x", "k_zeta_y")


@dataclass(frozen=True)
class Gains:
    """Torso gains ``K_phi`` (pitch, roll) and DCM gains ``K_zeta`` (x, y), all 1/s."""

    K_phi: tuple = (6.0, 6.0)
    K_zeta: tuple = (3.0, 3.0)

    def __post_init__(self):
        vals = np.concatenate([np.asarray(self.K_phi, float), np.asarray(self.K_zeta, float)])
        if vals.shape != (4,) or not np.all(vals > 0):
            raise ValueError(f"all gains must be positive, got K_phi={self.K_phi}, K_zeta={self.K_zeta}")

    def as_array(self) -> np.ndarray:
        return np.array([*self.K_phi, *self.K_zeta], dtype=np.float64)


@dataclass(frozen=True)
class ControlConfig:
    gains: Gains = field(default_factory=Gains)
    # per-residual saturation S, order as RESIDUAL_NAMES
    saturation: tuple = (0.03, 0.03, 20.0, 20.0, 0.05, 0.05, 0.05, 0.3)
    # bounds of the learned gains, order as GAIN_NAMES
    gain_low: tuple = (1.0, 1.0, 0.5, 0.5)
    gain_high: tuple = (11.0, 11.0, 5.5, 5.5)
    step_time_min: float = 0.2
    step_time_max: float = 1.0
    torque_kd: float = 10.0
    force_step_adjust: bool = False

    def __post_init__(self):
        if len(self.saturation) != kernels.N_RESIDUALS or min(self.saturation) <= 0:
            raise ValueError("saturation needs 8 positive entries")
        lo, hi = np.asarray(self.gain_low, float), np.asarray(self.gain_high, float)
        if lo.shape != (4,) or hi.shape != (4,) or np.any(lo <= 0) or np.any(hi <= lo):
            raise ValueError("gain bounds must satisfy 0 < low < high")
        if not 0 < self.step_time_min < self.step_time_max:
            raise ValueError("step time clamp must satisfy 0 < min < max")

    @property
    def S(self) -> np.ndarray:
        return np.asarray(self.saturation, dtype=np.float64)

    def gain_center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.gain_low) + np.asarray(self.gain_high))

    def gain_half(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.gain_high) - np.asarray(self.gain_low))


@dataclass(frozen=True)
class ResidualAction:
    delta: np.ndarray
    gains_out: Gains

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=np.float64).reshape(kernels.N_RESIDUALS))

    @classmethod
    def zero(cls, cfg: ControlConfig) -> "ResidualAction":
        return cls(np.zeros(kernels.N_RESIDUALS), cfg.gains)

    def check(self, S) -> None:
        if np.any(np.abs(self.delta) > np.asarray(S) * (1 + 1e-12)):
            raise ValueError("residual exceeds its saturation bound")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.gains_out.as_array()])

    @classmethod
    def from_vector(cls, v) -> "ResidualAction":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:8], Gains(tuple(v[8:10]), tuple(v[10:12])))


@dataclass(frozen=True)
class ActuationCommand:
    zmp_cmd: np.ndarray
    flywheel_torque: np.ndarray  # (pitch, roll)
    next_footstep_override: Optional[np.ndarray]
    commanded_c_z: float
    commanded_T: float
    saturated: bool = False
    step_target: Optional[np.ndarray] = None

    def as_vector(self) -> np.ndarray:
        """Kernel layout (``kernels.K_*``)."""
        tgt = self.step_target if self.step_target is not None else np.full(2, np.nan)
        return np.array([
            self.zmp_cmd[0], self.zmp_cmd[1], self.flywheel_torque[0], self.flywheel_torque[1],
            tgt[0], tgt[1], self.commanded_T, self.commanded_c_z,
            float(self.saturated), float(self.next_footstep_override is not None),
        ])


def torso_pd(phi, phi_dot, phi_d, phi_dot_d, K_phi) -> np.ndarray:
    """Commanded torso rate so that the angle error decays at rate ``K_phi``.

    ``phi_dot`` is accepted for signature symmetry; the rate law does not use it.
    """
    K = np.asarray(K_phi.K_phi if isinstance(K_phi, Gains) else K_phi, dtype=np.float64)
    return np.asarray(phi_dot_d, float) - K * (np.asarray(phi, float) - np.asarray(phi_d, float))


def dcm_tracker(zeta, zeta_d, zeta_d_dot, K_zeta, omega: float) -> np.ndarray:
    """ZMP that realizes the commanded DCM rate under the LIP."""
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    K = np.asarray(K_zeta.K_zeta if isinstance(K_zeta, Gains) else K_zeta, dtype=np.float64)
    zeta = np.asarray(zeta, float)
    rate = np.asarray(zeta_d_dot, float) - K * (zeta - np.asarray(zeta_d, float))
    return zeta - rate / omega


def saturate_zmp(zmp_cmd, support_center, half_extents) -> tuple[np.ndarray, bool]:
    half = np.asarray(half_extents, dtype=np.float64)
    if not np.all(half > 0):
        raise ValueError("support polygon half extents must be positive")
    center = np.asarray(support_center, dtype=np.float64)
    zmp_cmd = np.asarray(zmp_cmd, dtype=np.float64)
    out = np.clip(zmp_cmd, center - half, center + half)
    return out, bool(np.any(out != zmp_cmd))


def maybe_adjust_step(zeta, current_foot, t: float, T: float, omega: float, saturated: bool,
                      delta_step, force: bool = False) -> Optional[np.ndarray]:
    """Capture step plus the learned offset, only while the ZMP is saturated."""
    if not (saturated or force):
        return None
    foot = current_foot.pos if hasattr(current_foot, "pos") else np.asarray(current_foot, float)
    return capture_step(foot, zeta, omega, t, T) + np.asarray(delta_step, float)


def flywheel_torque(rate_cmd, phi_dot, inertia: float, kd: float) -> np.ndarray:
    return inertia * kd * (np.asarray(rate_cmd, float) - np.asarray(phi_dot, float))


def control_cycle(plant_obs, plan, residual: ResidualAction, model: PendulumModel,
                  cfg: ControlConfig, plant_params) -> ActuationCommand:
    """Merge the analytical command with the learned residuals.

    ``plan`` must have been made at the start of the current step: its first
    footstep is the stance foot and its second the nominal landing.  ``model``
    is updated in place with the commanded COM height.
    """
    d = residual.delta
    gains = residual.gains_out
    commanded_c_z = plan.config.com_height + d[6]
    model.set_height(commanded_c_z)
    w = model.omega
    commanded_T = float(np.clip(plan.config.step_duration + d[7], cfg.step_time_min, cfg.step_time_max))

    phase = plant_obs.step_phase
    zeta_d, zeta_d_dot = plan.stance_reference(phase)

    zeta = plant_obs.c[:2] + plant_obs.c_dot[:2] / w
    zmp = dcm_tracker(zeta, zeta_d, zeta_d_dot, gains, w) + d[0:2]
    support = plant_obs.support_pos[:2]
    zmp_sat, saturated = saturate_zmp(zmp, support, plant_params.foot_half_extents)

    nominal = plan.footsteps[1].pos
    override = maybe_adjust_step(zeta, support, min(phase, commanded_T), commanded_T, w, saturated,
                                 d[4:6], force=cfg.force_step_adjust)
    if override is None and (d[4] != 0.0 or d[5] != 0.0):
        override = nominal + d[4:6]
    target = nominal.copy() if override is None else override

    rate = torso_pd(plant_obs.phi, plant_obs.phi_dot, np.zeros(2), np.zeros(2), gains)
    torque = flywheel_torque(rate, plant_obs.phi_dot, plant_params.flywheel_inertia, cfg.torque_kd) + d[2:4]
    return ActuationCommand(zmp_sat, torque, override, commanded_c_z, commanded_T, saturated, target)
