"""Online planners: footsteps, step timing, swing spline, COM and DCM references."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .lip import GRAVITY, ComState, natural_frequency

LEFT = 1
RIGHT = -1


@dataclass(frozen=True)
class GaitConfig:
    stride_x: float = 0.0
    stride_y: float = 0.2  # lateral separation between the feet
    step_duration: float = 0.5
    swing_height: float = 0.04
    com_height: float = 0.6
    n_steps: int = 4

    def __post_init__(self):
        if not self.step_duration > 0:
            raise ValueError("step_duration must be positive")
        if self.swing_height < 0:
            raise ValueError("swing_height must be non-negative")
        if not self.com_height > 0:
            raise ValueError("com_height must be positive")
        if not self.stride_y > 0:
            raise ValueError("stride_y must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    @property
    def omega(self) -> float:
        return natural_frequency(GRAVITY, self.com_height)


@dataclass(frozen=True)
class Footstep:
    """A foot placement; ``[t_0, t_f)`` is the interval it supports the body."""

    pos: np.ndarray
    side: int
    t_0: Optional[float] = None
    t_f: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=np.float64).reshape(2))
        if self.side not in (LEFT, RIGHT):
            raise ValueError(f"side must be +1 (left) or -1 (right), got {self.side}")
        if self.t_0 is not None and not self.t_0 < self.t_f:
            raise ValueError(f"footstep needs t_0 < t_f, got [{self.t_0}, {self.t_f})")


def plan_footsteps(config: GaitConfig, current_feet: Sequence, support_side: int = LEFT) -> list[Footstep]:
    """Future landing positions for ``config.n_steps`` alternating steps.

    ``current_feet`` is ``(support, swing)``.  Steps advance ``stride_x`` along x
    and sit ``stride_y / 2`` either side of the line through the stance foot.
    """
    if config.n_steps == 0:
        raise ValueError("cannot plan an empty footstep sequence")
    support = np.asarray(current_feet[0], dtype=np.float64)
    swing = np.asarray(current_feet[1], dtype=np.float64)
    if np.array_equal(support, swing):
        raise ValueError("support and swing feet coincide")
    center_y = support[1] - support_side * config.stride_y / 2
    steps = []
    side = -support_side
    for k in range(1, config.n_steps + 1):
        pos = (support[0] + k * config.stride_x, center_y + side * config.stride_y / 2)
        steps.append(Footstep(pos, side))
        side = -side
    return steps


def assign_step_times(footsteps: Sequence[Footstep], T: float, t_start: float = 0.0) -> list[Footstep]:
    if not T > 0:
        raise ValueError(f"step duration must be positive, got {T}")
    return [replace(f, t_0=t_start + k * T, t_f=t_start + (k + 1) * T) for k, f in enumerate(footsteps)]


def swing_trajectory(start, end, z_max: float, t_0: float, t_f: float, t: float) -> np.ndarray:
    """Swing foot position: zero-velocity cubic in x/y, apex ``z_max`` at mid-step."""
    if not t_0 <= t <= t_f:
        raise ValueError(f"t={t} outside swing interval [{t_0}, {t_f}]")
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if t == t_0:
        return start.copy()
    if t == t_f:
        return end.copy()
    s = (t - t_0) / (t_f - t_0)
    b = kernels.cubic_blend(s)
    out = start + (end - start) * b
    out[2] += kernels.swing_height(s, z_max)
    return out


@dataclass(frozen=True)
class ComSegment:
    foot: np.ndarray
    c_0: np.ndarray
    c_f: np.ndarray
    t_0: float
    t_f: float


class ComTrajectory:
    """Piecewise closed-form COM reference, one segment per stance phase."""

    def __init__(self, segments: list[ComSegment], omega: float):
        self.segments = segments
        self.omega = omega
        self._starts = [s.t_0 for s in segments]

    @property
    def t_start(self) -> float:
        return self.segments[0].t_0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_f

    def segment_at(self, t: float) -> ComSegment:
        if not self.t_start <= t <= self.t_end:
            raise ValueError(f"t={t} outside plan [{self.t_start}, {self.t_end}]")
        k = bisect.bisect_right(self._starts, t) - 1
        return self.segments[max(k, 0)]

    def _eval(self, fn, t):
        s = self.segment_at(t)
        return np.array([fn(s.foot[k], s.c_0[k], s.c_f[k], s.t_0, s.t_f, self.omega, t) for k in range(2)])

    def position(self, t: float) -> np.ndarray:
        return self._eval(kernels.com_bvp, t)

    def velocity(self, t: float) -> np.ndarray:
        return self._eval(kernels.com_bvp_vel, t)

    def acceleration(self, t: float) -> np.ndarray:
        s = self.segment_at(t)
        return self.omega**2 * (self.position(t) - s.foot)

    __call__ = position


def plan_com(footsteps: Sequence[Footstep], config: GaitConfig, c_start: ComState,
             omega: Optional[float] = None) -> ComTrajectory:
    """Chain closed-form segments; each ends midway to the next foot, the last on its foot."""
    if not footsteps:
        raise ValueError("cannot plan a COM trajectory without footsteps")
    omega = config.omega if omega is None else omega
    segments = []
    c_0 = np.asarray(c_start.c, dtype=np.float64)
    for k, step in enumerate(footsteps):
        if step.t_0 is None:
            raise ValueError("footsteps need timestamps before COM planning")
        if k + 1 < len(footsteps):
            c_f = 0.5 * (step.pos + footsteps[k + 1].pos)
        else:
            c_f = step.pos.copy()
        segments.append(ComSegment(step.pos, c_0, c_f, step.t_0, step.t_f))
        c_0 = c_f
    return ComTrajectory(segments, omega)


class DcmReference:
    def __init__(self, com: ComTrajectory, omega: float):
        self.com = com
        self.omega = omega

    def __call__(self, t: float) -> np.ndarray:
        return self.com.position(t) + self.com.velocity(t) / self.omega

    def rate(self, t: float) -> np.ndarray:
        return self.com.velocity(t) + self.com.acceleration(t) / self.omega


def plan_dcm(com_ref: ComTrajectory, omega: float):
    """Desired DCM and its time derivative, both analytic."""
    ref = DcmReference(com_ref, omega)
    return ref, ref.rate


@dataclass
class GaitPlan:
    footsteps: list[Footstep]
    com: ComTrajectory
    dcm: DcmReference
    config: GaitConfig

    @property
    def omega(self) -> float:
        return self.com.omega

    def com_ref(self, t: float) -> np.ndarray:
        return self.com.position(t)

    def dcm_ref(self, t: float) -> np.ndarray:
        return self.dcm(t)

    def dcm_ref_dot(self, t: float) -> np.ndarray:
        return self.dcm.rate(t)

    def stance_reference(self, phase: float) -> tuple[np.ndarray, np.ndarray]:
        """Desired DCM and rate on the first (stance) segment, ``phase`` seconds in.

        Past the segment end the reference holds its final value at zero rate.
        """
        seg = self.com.segments[0]
        dur = seg.t_f - seg.t_0
        tau = min(phase, dur)
        w = self.omega
        c = np.array([kernels.com_bvp(seg.foot[k], seg.c_0[k], seg.c_f[k], 0.0, dur, w, tau) for k in range(2)])
        v = np.array([kernels.com_bvp_vel(seg.foot[k], seg.c_0[k], seg.c_f[k], 0.0, dur, w, tau) for k in range(2)])
        zeta = c + v / w
        if phase > dur:
            return zeta, np.zeros(2)
        return zeta, w * (zeta - seg.foot)

    def support_at(self, t: float) -> Footstep:
        starts = [f.t_0 for f in self.footsteps]
        k = bisect.bisect_right(starts, t) - 1
        return self.footsteps[min(max(k, 0), len(self.footsteps) - 1)]

    def swing_ref(self, t: float) -> np.ndarray:
        """Swing foot moving from the previous stance to the next one."""
        starts = [f.t_0 for f in self.footsteps]
        k = min(max(bisect.bisect_right(starts, t) - 1, 0), len(self.footsteps) - 1)
        cur = self.footsteps[k]
        if k + 1 >= len(self.footsteps):
            return np.append(cur.pos, 0.0)
        prev = self.footsteps[k - 1].pos if k > 0 else self.footsteps[k + 1].pos
        nxt = self.footsteps[k + 1].pos
        return swing_trajectory(np.append(prev, 0.0), np.append(nxt, 0.0), self.config.swing_height,
                                cur.t_0, cur.t_f, min(max(t, cur.t_0), cur.t_f))


def make_plan(config: GaitConfig, support, swing, support_side: int, c_start: ComState,
              t_start: float = 0.0, omega: Optional[float] = None) -> GaitPlan:
    """Full planner chain from the current feet: footsteps, timing, COM, DCM."""
    stance = Footstep(support, support_side)
    steps = [stance] + plan_footsteps(config, (support, swing), support_side)
    steps = assign_step_times(steps, config.step_duration, t_start)
    omega = config.omega if omega is None else omega
    com = plan_com(steps, config, c_start, omega)
    dcm, _ = plan_dcm(com, omega)
    return GaitPlan(steps, com, dcm, config)


def replan(plan: GaitPlan, t: float, c_now) -> GaitPlan:
    """Restart the active segment at ``(t, c_now)`` keeping the remaining footsteps."""
    seg_idx = max(bisect.bisect_right([s.t_0 for s in plan.com.segments], t) - 1, 0)
    old = plan.com.segments[seg_idx]
    if t >= old.t_f:
        raise ValueError("cannot replan at the very end of a segment")
    head = ComSegment(old.foot, np.asarray(c_now, dtype=np.float64).reshape(2), old.c_f, t, old.t_f)
    segments = [head] + plan.com.segments[seg_idx + 1:]
    com = ComTrajectory(segments, plan.omega)
    footsteps = plan.footsteps[seg_idx:]
    return GaitPlan(footsteps, com, DcmReference(com, plan.omega), plan.config)
