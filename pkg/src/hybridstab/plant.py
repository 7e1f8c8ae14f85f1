"""Reduced-order biped plant: LIP body, torso flywheel, finite feet, discrete steps.

Scenarios L1 (flat), L2 (uneven landings) and T1 (tilting platform) differ in
how terrain, pushes and platform tilt are drawn.  The numerics live in
:mod:`hybridstab.kernels`; this module holds the typed, per-call API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels as K
from .gait import GaitConfig

ALIVE = "alive"
FELL = "fell"
TIMEOUT = "timeout"
_STATUS_NAMES = {K.STATUS_ALIVE: ALIVE, K.STATUS_FELL: FELL, K.STATUS_TIMEOUT: TIMEOUT}

OBS_NAMES = (
    "com_rel_x", "com_rel_y", "com_rel_z", "com_vel_x", "com_vel_y", "com_vel_z",
    "phi_pitch", "phi_roll", "phi_dot_pitch", "phi_dot_roll",
    "zmp_rel_x", "zmp_rel_y", "swing_rel_x", "swing_rel_y", "step_phase", "support_side",
)


@dataclass(frozen=True)
class PlantParams:
    g: float = 9.81
    mass: float = 31.0
    flywheel_inertia: float = 1.2
    flywheel_damping: float = 0.5
    foot_half_extents: tuple = (0.09, 0.045)
    height_omega: float = 15.0  # vertical COM tracking, critically damped
    reach_x: float = 0.1
    min_width: float = 0.1
    max_width: float = 0.7
    physics_dt: float = 0.002
    control_dt: float = 0.02
    fall_height: float = 0.35
    fall_angle_deg: float = 60.0
    fall_distance: float = 0.6

    def __post_init__(self):
        ratio = self.control_dt / self.physics_dt
        if not 0 < self.physics_dt <= 0.01 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control_dt must be an integer multiple of physics_dt <= 0.01")
        if self.mass <= 0 or self.flywheel_inertia <= 0 or self.flywheel_damping <= 0:
            raise ValueError("mass, inertia and damping must be positive")
        if not 0 < self.min_width < self.max_width:
            raise ValueError("step width limits must satisfy 0 < min < max")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "l1"
    terrain_amplitude: float = 0.0
    pushes: bool = True
    push_interval: tuple = (2.5, 3.0)
    push_force: tuple = (500.0, 850.0)
    push_duration: float = 0.025
    tilt: bool = False
    tilt_random_deg: float = 8.0
    tilt_gain: float = 0.35
    tilt_limit_deg: float = 15.0
    tilt_period: float = 0.5
    train_cap: float = 50.0
    eval_cap: float = 500.0

    def __post_init__(self):
        if self.kind not in ("l1", "l2", "t1"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.terrain_amplitude < 0:
            raise ValueError("terrain_amplitude must be non-negative")
        lo, hi = self.push_interval
        if not 0 < lo <= hi:
            raise ValueError("push interval must be positive and ordered")
        flo, fhi = self.push_force
        if not 0 <= flo <= fhi:
            raise ValueError("push force range must be non-negative and ordered")
        if not self.push_duration > 0:
            raise ValueError("push duration must be positive")

    @classmethod
    def named(cls, kind: str, **overrides) -> "ScenarioSpec":
        kind = kind.lower()
        base = {
            "l1": cls(kind="l1"),
            "l2": cls(kind="l2", terrain_amplitude=0.02),
            # the tilting platform runs without pushes
            "t1": cls(kind="t1", pushes=False, tilt=True),
        }
        if kind not in base:
            raise ValueError(f"unknown scenario {kind!r}")
        return replace(base[kind], **overrides)


@dataclass(frozen=True)
class PushEvent:
    t_start: float
    duration: float
    force: float
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(2)
        object.__setattr__(self, "direction", d)
        if not self.duration > 0:
            raise ValueError("push duration must be positive")
        if self.force < 0:
            raise ValueError("push force must be non-negative")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("push direction must be a unit vector")

    @property
    def force_vector(self) -> np.ndarray:
        return self.force * self.direction

    @classmethod
    def at_angle(cls, t_start: float, force: float, angle_deg: float, duration: float = 0.025) -> "PushEvent":
        a = math.radians(angle_deg)
        return cls(t_start, duration, force, np.array([math.cos(a), math.sin(a)]))


@dataclass
class PlantState:
    c: np.ndarray
    c_dot: np.ndarray
    phi: np.ndarray  # (pitch, roll)
    phi_dot: np.ndarray
    support_pos: np.ndarray
    swing_pos: np.ndarray
    support_side: int  # +1 left, -1 right
    zmp: np.ndarray
    step_phase: float = 0.0
    time: float = 0.0
    liftoff_pos: Optional[np.ndarray] = None

    def __post_init__(self):
        for name, n in (("c", 3), ("c_dot", 3), ("phi", 2), ("phi_dot", 2), ("support_pos", 3),
                        ("swing_pos", 3), ("zmp", 2)):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(n).copy())
        if self.liftoff_pos is None:
            self.liftoff_pos = self.swing_pos.copy()
        self.liftoff_pos = np.asarray(self.liftoff_pos, dtype=np.float64).reshape(3).copy()
        self.support_side = int(self.support_side)

    @classmethod
    def neutral(cls, gait: GaitConfig, support_side: int = 1, origin=(0.0, 0.0)) -> "PlantState":
        """Standing between the feet, about to walk in place."""
        ox, oy = origin
        half = gait.stride_y / 2
        sup = np.array([ox, oy + support_side * half, 0.0])
        sw = np.array([ox, oy - support_side * half, 0.0])
        return cls(c=[ox, oy, gait.com_height], c_dot=np.zeros(3), phi=np.zeros(2), phi_dot=np.zeros(2),
                   support_pos=sup, swing_pos=sw, support_side=support_side, zmp=sup[:2])

    def to_row(self) -> np.ndarray:
        row = np.zeros(K.ENV_DIM)
        row[K.S_CX:K.S_CZ + 1] = self.c
        row[K.S_VX:K.S_VZ + 1] = self.c_dot
        row[K.S_PHI_P:K.S_PHI_R + 1] = self.phi
        row[K.S_DPHI_P:K.S_DPHI_R + 1] = self.phi_dot
        row[K.S_SUP_X:K.S_SUP_Z + 1] = self.support_pos
        row[K.S_SW_X:K.S_SW_Z + 1] = self.swing_pos
        row[K.S_SIDE] = self.support_side
        row[K.S_ZMP_X:K.S_ZMP_Y + 1] = self.zmp
        row[K.S_PHASE] = self.step_phase
        row[K.S_TIME] = self.time
        row[K.S_LIFT_X:K.S_LIFT_Z + 1] = self.liftoff_pos
        return row

    @classmethod
    def from_row(cls, row: np.ndarray) -> "PlantState":
        return cls(
            c=row[K.S_CX:K.S_CZ + 1], c_dot=row[K.S_VX:K.S_VZ + 1],
            phi=row[K.S_PHI_P:K.S_PHI_R + 1], phi_dot=row[K.S_DPHI_P:K.S_DPHI_R + 1],
            support_pos=row[K.S_SUP_X:K.S_SUP_Z + 1], swing_pos=row[K.S_SW_X:K.S_SW_Z + 1],
            support_side=int(row[K.S_SIDE]), zmp=row[K.S_ZMP_X:K.S_ZMP_Y + 1],
            step_phase=float(row[K.S_PHASE]), time=float(row[K.S_TIME]),
            liftoff_pos=row[K.S_LIFT_X:K.S_LIFT_Z + 1],
        )


def kernel_params(params: PlantParams, scenario: ScenarioSpec, gait: GaitConfig, cap: float) -> np.ndarray:
    prm = np.zeros(K.PLANT_PARAM_DIM)
    prm[K.P_G] = params.g
    prm[K.P_MASS] = params.mass
    prm[K.P_IFLY] = params.flywheel_inertia
    prm[K.P_DAMP] = params.flywheel_damping
    prm[K.P_HALF_X], prm[K.P_HALF_Y] = params.foot_half_extents
    prm[K.P_Z_OMEGA] = params.height_omega
    prm[K.P_REACH_X] = params.reach_x
    prm[K.P_MIN_WIDTH] = params.min_width
    prm[K.P_MAX_WIDTH] = params.max_width
    prm[K.P_STRIDE_X] = gait.stride_x
    prm[K.P_STRIDE_Y] = gait.stride_y
    prm[K.P_SWING_H] = gait.swing_height
    prm[K.P_PUSH_DUR] = scenario.push_duration
    prm[K.P_TILT_ON] = 1.0 if scenario.tilt else 0.0
    prm[K.P_TILT_PERIOD] = scenario.tilt_period
    prm[K.P_TILT_GAIN] = scenario.tilt_gain
    prm[K.P_TILT_LIMIT] = scenario.tilt_limit_deg
    prm[K.P_FALL_CZ] = params.fall_height
    prm[K.P_FALL_PHI] = math.radians(params.fall_angle_deg)
    prm[K.P_FALL_DIST] = params.fall_distance
    prm[K.P_EP_CAP] = cap
    return prm


def tilt_acceleration(angles_deg, g: float = 9.81) -> np.ndarray:
    """COM acceleration from platform angles (x-actuator, y-actuator) in degrees.

    The y-axis actuator slopes the platform along x and vice versa.
    """
    ax_deg, ay_deg = angles_deg
    return np.array([-g * math.sin(math.radians(ay_deg)), -g * math.sin(math.radians(ax_deg))])


def step_dynamics(state: PlantState, cmd, dt: float, scenario: ScenarioSpec,
                  params: PlantParams = PlantParams(), gait: GaitConfig = GaitConfig(), *,
                  external_force=(0.0, 0.0), tilt_deg=(0.0, 0.0), terrain_height: float = 0.0) -> PlantState:
    """Advance the plant by one integration step of size ``dt``.

    ``cmd`` is an :class:`~hybridstab.control.ActuationCommand`; its step target
    (override or nominal) is where the swing foot lands if the step completes.
    ``external_force`` is the push force acting during this step (N).
    """
    if not 0 < dt <= 0.01:
        raise ValueError(f"dt must lie in (0, 0.01], got {dt}")
    prm = kernel_params(params, scenario, gait, math.inf)
    row = state.to_row()
    row[K.S_TCMD] = cmd.commanded_T
    row[K.S_CZCMD] = cmd.commanded_c_z
    tgt = cmd.step_target if cmd.step_target is not None else cmd.next_footstep_override
    if tgt is None:
        tgt = K.plan_next(state.support_pos[0], state.support_pos[1], state.support_side, prm)
    row[K.S_TGT_X], row[K.S_TGT_Y] = tgt
    ext = np.asarray(external_force, float) / params.mass
    if scenario.tilt:
        ext = ext + tilt_acceleration(tilt_deg, params.g)
    K.integrate(row, cmd.zmp_cmd[0], cmd.zmp_cmd[1], cmd.flywheel_torque[0], cmd.flywheel_torque[1],
                ext[0], ext[1], dt, prm)
    if row[K.S_PHASE] >= cmd.commanded_T - 1e-9:
        K.touchdown(row, terrain_height, prm)
    else:
        K.update_swing(row, prm)
    return PlantState.from_row(row)


def schedule_pushes(rng: np.random.Generator, interval, force, duration: float, horizon: float) -> list[PushEvent]:
    """Pushes separated by i.i.d. uniform gaps, uniform magnitudes and headings."""
    lo, hi = interval
    flo, fhi = force
    if not (0 < lo <= hi and 0 <= flo <= fhi):
        raise ValueError("push interval and force ranges must be ordered")
    events = []
    t = 0.0
    while True:
        t += rng.uniform(lo, hi)
        if t >= horizon:
            break
        f = rng.uniform(flo, fhi)
        a = rng.uniform(0.0, 2.0 * math.pi)
        events.append(PushEvent(t, duration, f, np.array([math.cos(a), math.sin(a)])))
    return events


def sample_terrain(rng: np.random.Generator, amplitude: float, size=None):
    """Landing height offset, uniform in [-amplitude, amplitude]."""
    if amplitude < 0:
        raise ValueError(f"terrain amplitude must be non-negative, got {amplitude}")
    if amplitude == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.uniform(-amplitude, amplitude, size)


def platform_tilt(rng: np.random.Generator, robot_pos, scenario: ScenarioSpec = ScenarioSpec.named("t1"),
                  random_component=None) -> np.ndarray:
    """Target angles (deg) of the (x-axis, y-axis) platform actuators.

    Each actuator adds a uniform random component to a correction proportional
    to the robot position on the opposite axis, then clamps.
    """
    px, py = np.asarray(robot_pos, dtype=np.float64)
    if random_component is None:
        r = rng.uniform(-scenario.tilt_random_deg, scenario.tilt_random_deg, 2)
    else:
        r = np.asarray(random_component, dtype=np.float64)
    lim = scenario.tilt_limit_deg
    return np.array([
        K.clamp(r[0] + scenario.tilt_gain * py, -lim, lim),
        K.clamp(r[1] + scenario.tilt_gain * px, -lim, lim),
    ])


def build_observation(state: PlantState, commanded_T: float) -> np.ndarray:
    row = state.to_row()
    row[K.S_TCMD] = commanded_T
    out = np.empty(K.OBS_DIM)
    K.observe(row, out)
    return out


def apply_obs_noise(obs: np.ndarray, N: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply every entry by an independent factor drawn from U(1, N)."""
    if N < 1.0:
        raise ValueError(f"noise factor bound must be >= 1, got {N}")
    obs = np.asarray(obs, dtype=np.float64)
    if N == 1.0:
        return obs.copy()
    return obs * rng.uniform(1.0, N, obs.shape)


def check_termination(state: PlantState, params: PlantParams = PlantParams(), cap: float = math.inf) -> str:
    prm = kernel_params(params, ScenarioSpec(), GaitConfig(), cap)
    return _STATUS_NAMES[K.termination(state.to_row(), prm)]


def mirror_plant_state(state: PlantState) -> PlantState:
    """Reflect a plant state through the sagittal (x-z) plane."""
    flip3 = np.array([1.0, -1.0, 1.0])
    flip2 = np.array([1.0, -1.0])
    return PlantState(
        c=state.c * flip3, c_dot=state.c_dot * flip3,
        phi=state.phi * flip2, phi_dot=state.phi_dot * flip2,  # roll flips, pitch kept
        support_pos=state.support_pos * flip3, swing_pos=state.swing_pos * flip3,
        support_side=-state.support_side, zmp=state.zmp * flip2,
        step_phase=state.step_phase, time=state.time, liftoff_pos=state.liftoff_pos * flip3,
    )


def flywheel_energy(state: PlantState, params: PlantParams = PlantParams()) -> float:
    return 0.5 * params.flywheel_inertia * float(state.phi_dot @ state.phi_dot)
