"""Linear inverted pendulum and divergent component of motion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

GRAVITY = 9.81


def _vec2(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite 2D vector: {v}")
    return v


def natural_frequency(g: float, c_z: float) -> float:
    if not (g > 0 and c_z > 0):
        raise ValueError(f"natural frequency needs g > 0 and c_z > 0, got g={g}, c_z={c_z}")
    return math.sqrt(g / c_z)


@dataclass
class PendulumModel:
    """Point mass at constant height ``c_z`` above the ZMP plane."""

    g: float = GRAVITY
    c_z: float = 0.6
    omega: float = field(init=False)

    def __post_init__(self):
        self.omega = natural_frequency(self.g, self.c_z)

    def set_height(self, c_z: float) -> None:
        self.omega = natural_frequency(self.g, c_z)
        self.c_z = c_z


@dataclass(frozen=True)
class ComState:
    c: np.ndarray
    c_dot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", _vec2(self.c))
        object.__setattr__(self, "c_dot", _vec2(self.c_dot))


@dataclass(frozen=True)
class DcmPoint:
    zeta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "zeta", _vec2(self.zeta))


def _check_omega(omega: float) -> None:
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")


def lip_acceleration(c, p, omega: float) -> np.ndarray:
    return omega**2 * (_vec2(c) - _vec2(p))


def dcm_of(state: ComState, omega: float) -> DcmPoint:
    _check_omega(omega)
    return DcmPoint(state.c + state.c_dot / omega)


def state_derivative(c, zeta, p, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative of (c, zeta) for the first-order LIP form.

    ``zeta`` may be a :class:`DcmPoint` or a plain 2-vector.
    """
    _check_omega(omega)
    c = _vec2(c)
    z = _vec2(zeta.zeta if isinstance(zeta, DcmPoint) else zeta)
    p = _vec2(p)
    c_dot = -omega * c + omega * z
    zeta_dot = omega * z - omega * p
    return c_dot, zeta_dot


def _check_segment(t_0: float, t_f: float, t: float) -> None:
    if t_0 == t_f:
        raise ValueError("zero-duration segment: sinh(0) denominator")
    if not t_0 < t_f:
        raise ValueError(f"segment must satisfy t_0 < t_f, got {t_0}, {t_f}")
    if not t_0 <= t <= t_f:
        raise ValueError(f"t={t} outside segment [{t_0}, {t_f}]")


def com_closed_form(f_i, c_0, c_f, t_0: float, t_f: float, omega: float, t: float) -> np.ndarray:
    """COM position at ``t`` for the step that starts at ``c_0`` and ends at ``c_f``
    while the ZMP sits on the stance foot ``f_i``."""
    _check_segment(t_0, t_f, t)
    _check_omega(omega)
    f, a, b = _vec2(f_i), _vec2(c_0), _vec2(c_f)
    return np.array([kernels.com_bvp(f[k], a[k], b[k], t_0, t_f, omega, t) for k in range(2)])


def com_closed_form_velocity(f_i, c_0, c_f, t_0: float, t_f: float, omega: float, t: float) -> np.ndarray:
    _check_segment(t_0, t_f, t)
    _check_omega(omega)
    f, a, b = _vec2(f_i), _vec2(c_0), _vec2(c_f)
    return np.array([kernels.com_bvp_vel(f[k], a[k], b[k], t_0, t_f, omega, t) for k in range(2)])


def dcm_propagate(zeta_t, f_i, omega: float, dt: float) -> DcmPoint:
    """DCM after ``dt`` seconds with the ZMP held on ``f_i``."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    z = _vec2(zeta_t.zeta if isinstance(zeta_t, DcmPoint) else zeta_t)
    f = _vec2(f_i)
    return DcmPoint(np.array([kernels.capture_point(f[k], z[k], omega, dt) for k in range(2)]))


def capture_step(f_i, zeta_t, omega: float, t: float, T: float) -> np.ndarray:
    """Next footstep that lands exactly on the DCM at the end of the step."""
    if t > T:
        raise ValueError(f"t={t} is past the step duration T={T}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    return dcm_propagate(zeta_t, f_i, omega, T - t).zeta
