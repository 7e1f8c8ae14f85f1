"""Hot numeric kernels.

Everything here is written in scalar, loop-oriented style so it compiles under
``numba.njit`` and also runs unmodified as plain Python when the pure-numpy
path is selected (see :mod:`hybridstab._jit`).  The public modules
(:mod:`hybridstab.lip`, :mod:`hybridstab.control`, :mod:`hybridstab.plant`)
call into these helpers so both the readable API and the batched environment
share one implementation of every formula.

Per-environment state is a flat float64 row; the index constants below define
its layout.  The first ``PLANT_DIM`` entries are the plant state proper, the
remainder is controller/environment bookkeeping.
"""

import math

import numpy as np

from ._jit import njit

# --- plant state layout -----------------------------------------------------
S_CX, S_CY, S_CZ = 0, 1, 2
S_VX, S_VY, S_VZ = 3, 4, 5
S_PHI_P, S_PHI_R = 6, 7
S_DPHI_P, S_DPHI_R = 8, 9
S_SUP_X, S_SUP_Y, S_SUP_Z = 10, 11, 12
S_SW_X, S_SW_Y, S_SW_Z = 13, 14, 15
S_SIDE = 16
S_ZMP_X, S_ZMP_Y = 17, 18
S_PHASE = 19
S_TIME = 20
PLANT_DIM = 21

# --- environment bookkeeping ------------------------------------------------
S_LIFT_X, S_LIFT_Y, S_LIFT_Z = 21, 22, 23  # swing foot lift-off position
S_NEXT_X, S_NEXT_Y = 24, 25  # nominal next footstep from the planner
S_TGT_X, S_TGT_Y = 26, 27  # landing target held from the last command
S_PLAN_C0X, S_PLAN_C0Y = 28, 29  # COM at the start of the current segment
S_PLAN_T = 30  # duration of the current planned segment
S_PLAN_W = 31  # natural frequency the segment was planned with
S_TCMD = 32  # commanded step duration
S_CZCMD = 33  # commanded COM height
S_TQ_P, S_TQ_R = 34, 35  # flywheel torque held over the control period
S_TILT0_X, S_TILT0_Y = 36, 37  # platform angles (deg) at the slot start
S_TILT1_X, S_TILT1_Y = 38, 39  # platform target angles (deg)
S_TILT_SLOT = 40
S_PUSH_IDX = 41
S_LAND_IDX = 42
S_STATUS = 43  # STATUS_* below
S_NSTEPS = 44  # control steps taken
ENV_DIM = 45

STATUS_ALIVE = 0.0
STATUS_FELL = 1.0
STATUS_TIMEOUT = 2.0

# --- plant parameter vector -------------------------------------------------
P_G = 0
P_MASS = 1
P_IFLY = 2
P_DAMP = 3
P_HALF_X = 4
P_HALF_Y = 5
P_Z_OMEGA = 6
P_REACH_X = 7
P_MIN_WIDTH = 8
P_MAX_WIDTH = 9
P_STRIDE_X = 10
P_STRIDE_Y = 11
P_SWING_H = 12
P_PUSH_DUR = 13
P_TILT_ON = 14
P_TILT_PERIOD = 15
P_TILT_GAIN = 16
P_TILT_LIMIT = 17
P_FALL_CZ = 18
P_FALL_PHI = 19
P_FALL_DIST = 20
P_EP_CAP = 21
PLANT_PARAM_DIM = 22

# --- controller parameter vector --------------------------------------------
C_BASE_T = 0
C_BASE_CZ = 1
C_T_MIN = 2
C_T_MAX = 3
C_TORQUE_KD = 4
C_PHYS_DT = 5
C_SUBSTEPS = 6
C_FORCE_ADJUST = 7
CTRL_PARAM_DIM = 8

# --- actuation command vector (output of the control kernel) ----------------
K_PX, K_PY = 0, 1
K_TQ_P, K_TQ_R = 2, 3
K_TGT_X, K_TGT_Y = 4, 5
K_TCMD = 6
K_CZCMD = 7
K_SAT = 8
K_OVERRIDE = 9
CMD_DIM = 10

OBS_DIM = 16
ACT_DIM = 12
N_RESIDUALS = 8

_PHASE_EPS = 1e-9


# ---------------------------------------------------------------------------
# LIP / DCM scalar math (one axis at a time)
# ---------------------------------------------------------------------------
@njit
def com_bvp(f, c0, cf, t0, tf, w, t):
    """COM position on a step segment solving the LIP boundary value problem."""
    num = (f - cf) * math.sinh(w * (t - t0)) + (c0 - f) * math.sinh(w * (t - tf))
    return f + num / math.sinh(w * (t0 - tf))


@njit
def com_bvp_vel(f, c0, cf, t0, tf, w, t):
    num = (f - cf) * math.cosh(w * (t - t0)) + (c0 - f) * math.cosh(w * (t - tf))
    return w * num / math.sinh(w * (t0 - tf))


@njit
def capture_point(f, zeta, w, remaining):
    return f + (zeta - f) * math.exp(w * remaining)


@njit
def clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit
def cubic_blend(s):
    """Cubic with zero end slopes mapping [0, 1] onto [0, 1]."""
    return s * s * (3.0 - 2.0 * s)


@njit
def swing_height(s, z_max):
    # two cubic pieces meeting at the apex with zero slope
    if s <= 0.5:
        return z_max * cubic_blend(2.0 * s)
    return z_max * cubic_blend(2.0 * (1.0 - s))


# ---------------------------------------------------------------------------
# plant
# ---------------------------------------------------------------------------
@njit
def external_accel(st, prm, push_t, push_fx, push_fy, dt):
    """Average push acceleration over [t, t+dt); advances the push cursor."""
    t = st[S_TIME]
    t1 = t + dt
    dur = prm[P_PUSH_DUR]
    mass = prm[P_MASS]
    ax = 0.0
    ay = 0.0
    k = int(st[S_PUSH_IDX])
    n = push_t.shape[0]
    while k < n and push_t[k] < t1:
        lo = push_t[k] if push_t[k] > t else t
        end = push_t[k] + dur
        hi = end if end < t1 else t1
        if hi > lo:
            frac = (hi - lo) / dt
            ax += push_fx[k] / mass * frac
            ay += push_fy[k] / mass * frac
        if end <= t1:
            k += 1
            st[S_PUSH_IDX] = k
        else:
            break
    return ax, ay


@njit
def tilt_accel(st, prm, tilt_r):
    """Gravity bias from the tilting platform; updates the interpolation state."""
    period = prm[P_TILT_PERIOD]
    t = st[S_TIME]
    slot = int(math.floor(t / period + 1e-12))
    limit = prm[P_TILT_LIMIT]
    gain = prm[P_TILT_GAIN]
    while slot > st[S_TILT_SLOT]:
        nxt = int(st[S_TILT_SLOT]) + 1
        st[S_TILT0_X] = st[S_TILT1_X]
        st[S_TILT0_Y] = st[S_TILT1_Y]
        j = nxt % tilt_r.shape[0]
        # each actuator corrects with the robot position on the opposite axis
        st[S_TILT1_X] = clamp(tilt_r[j, 0] + gain * st[S_CY], -limit, limit)
        st[S_TILT1_Y] = clamp(tilt_r[j, 1] + gain * st[S_CX], -limit, limit)
        st[S_TILT_SLOT] = nxt
    s = (t - st[S_TILT_SLOT] * period) / period
    ang_x = st[S_TILT0_X] + (st[S_TILT1_X] - st[S_TILT0_X]) * s
    ang_y = st[S_TILT0_Y] + (st[S_TILT1_Y] - st[S_TILT0_Y]) * s
    g = prm[P_G]
    ax = -g * math.sin(math.radians(ang_y))
    ay = -g * math.sin(math.radians(ang_x))
    return ax, ay


@njit
def integrate(st, px, py, tq_p, tq_r, ax_ext, ay_ext, dt, prm):
    """One semi-implicit Euler step of the reduced-order plant (no stepping)."""
    g = prm[P_G]
    height = st[S_CZ] - st[S_SUP_Z]
    w2 = g / height
    mh = prm[P_MASS] * height
    acc_x = w2 * (st[S_CX] - px) - tq_p / mh + ax_ext
    acc_y = w2 * (st[S_CY] - py) - tq_r / mh + ay_ext
    wz = prm[P_Z_OMEGA]
    z_target = st[S_SUP_Z] + st[S_CZCMD]
    acc_z = wz * wz * (z_target - st[S_CZ]) - 2.0 * wz * st[S_VZ]

    st[S_VX] += acc_x * dt
    st[S_VY] += acc_y * dt
    st[S_VZ] += acc_z * dt
    st[S_CX] += st[S_VX] * dt
    st[S_CY] += st[S_VY] * dt
    st[S_CZ] += st[S_VZ] * dt

    inertia = prm[P_IFLY]
    damp = prm[P_DAMP]
    st[S_DPHI_P] += (tq_p - damp * st[S_DPHI_P]) / inertia * dt
    st[S_DPHI_R] += (tq_r - damp * st[S_DPHI_R]) / inertia * dt
    st[S_PHI_P] += st[S_DPHI_P] * dt
    st[S_PHI_R] += st[S_DPHI_R] * dt

    st[S_ZMP_X] = px
    st[S_ZMP_Y] = py
    st[S_PHASE] += dt
    st[S_TIME] += dt


@njit
def update_swing(st, prm):
    s = clamp(st[S_PHASE] / st[S_TCMD], 0.0, 1.0)
    b = cubic_blend(s)
    st[S_SW_X] = st[S_LIFT_X] + (st[S_TGT_X] - st[S_LIFT_X]) * b
    st[S_SW_Y] = st[S_LIFT_Y] + (st[S_TGT_Y] - st[S_LIFT_Y]) * b
    st[S_SW_Z] = st[S_LIFT_Z] * (1.0 - b) + swing_height(s, prm[P_SWING_H])


@njit
def reachable(sup_x, sup_y, side, tx, ty, prm):
    """Clamp a landing target to the leg's reach around the stance foot."""
    rx = prm[P_REACH_X]
    x = clamp(tx, sup_x - rx, sup_x + rx)
    # the new foot lands on the side opposite to the current support side
    width = (sup_y - ty) * side
    width = clamp(width, prm[P_MIN_WIDTH], prm[P_MAX_WIDTH])
    return x, sup_y - side * width


@njit
def plan_next(sup_x, sup_y, side, prm):
    """Nominal next footstep for the stride parameters, relative to the stance foot."""
    return sup_x + prm[P_STRIDE_X], sup_y - side * prm[P_STRIDE_Y]


@njit
def start_segment(st, w):
    """Replan the current COM segment from the present state."""
    st[S_PLAN_C0X] = st[S_CX]
    st[S_PLAN_C0Y] = st[S_CY]
    st[S_PLAN_T] = st[S_TCMD]
    st[S_PLAN_W] = w


@njit
def touchdown(st, ground_z, prm):
    """Swap support and swing feet, landing the swing foot on its target."""
    side = st[S_SIDE]
    x, y = reachable(st[S_SUP_X], st[S_SUP_Y], side, st[S_TGT_X], st[S_TGT_Y], prm)
    st[S_LIFT_X] = st[S_SUP_X]
    st[S_LIFT_Y] = st[S_SUP_Y]
    st[S_LIFT_Z] = st[S_SUP_Z]
    st[S_SW_X] = st[S_SUP_X]
    st[S_SW_Y] = st[S_SUP_Y]
    st[S_SW_Z] = st[S_SUP_Z]
    st[S_SUP_X] = x
    st[S_SUP_Y] = y
    st[S_SUP_Z] = ground_z
    st[S_SIDE] = -side
    st[S_PHASE] = 0.0
    nx, ny = plan_next(x, y, -side, prm)
    st[S_NEXT_X] = nx
    st[S_NEXT_Y] = ny
    st[S_TGT_X] = nx
    st[S_TGT_Y] = ny
    st[S_LAND_IDX] += 1
    # ZMP is re-anchored on the new stance foot until the next control cycle
    st[S_ZMP_X] = x
    st[S_ZMP_Y] = y
    w = math.sqrt(prm[P_G] / st[S_CZCMD])
    start_segment(st, w)


@njit
def physics_substep(st, prm, dt, push_t, push_fx, push_fy, tilt_r, terrain):
    """Advance the plant by ``dt`` with the held command stored in ``st``."""
    ax, ay = external_accel(st, prm, push_t, push_fx, push_fy, dt)
    if prm[P_TILT_ON] > 0.0:
        tx, ty = tilt_accel(st, prm, tilt_r)
        ax += tx
        ay += ty
    integrate(st, st[S_ZMP_X], st[S_ZMP_Y], st[S_TQ_P], st[S_TQ_R], ax, ay, dt, prm)
    if st[S_PHASE] >= st[S_TCMD] - _PHASE_EPS:
        k = int(st[S_LAND_IDX]) % terrain.shape[0]
        touchdown(st, terrain[k], prm)
    else:
        update_swing(st, prm)


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------
@njit
def plan_reference(st, prm):
    """Desired DCM and its rate on the current segment (x, y)."""
    T = st[S_PLAN_T]
    w = st[S_PLAN_W]
    t = st[S_PHASE]
    past_end = t > T
    if past_end:
        t = T
    fx = st[S_SUP_X]
    fy = st[S_SUP_Y]
    cfx = 0.5 * (fx + st[S_NEXT_X])
    cfy = 0.5 * (fy + st[S_NEXT_Y])
    c0x = st[S_PLAN_C0X]
    c0y = st[S_PLAN_C0Y]
    cx = com_bvp(fx, c0x, cfx, 0.0, T, w, t)
    cy = com_bvp(fy, c0y, cfy, 0.0, T, w, t)
    vx = com_bvp_vel(fx, c0x, cfx, 0.0, T, w, t)
    vy = com_bvp_vel(fy, c0y, cfy, 0.0, T, w, t)
    zx = cx + vx / w
    zy = cy + vy / w
    if past_end:
        return zx, zy, 0.0, 0.0
    # the LIP planned about the stance foot has zeta_dot = w (zeta - f)
    return zx, zy, w * (zx - fx), w * (zy - fy)


@njit
def control(st, act, prm, ctl, cmd):
    """One control cycle: DCM tracking, saturation, stepping, torso regulation.

    ``act`` holds the already-squashed 12-vector (8 residuals + 4 gains).
    Results are written into ``cmd`` (layout ``K_*``).
    """
    cz_cmd = ctl[C_BASE_CZ] + act[6]
    w = math.sqrt(prm[P_G] / cz_cmd)
    T_cmd = clamp(ctl[C_BASE_T] + act[7], ctl[C_T_MIN], ctl[C_T_MAX])

    kphi_p = act[8]
    kphi_r = act[9]
    kz_x = act[10]
    kz_y = act[11]

    zdx, zdy, zddx, zddy = plan_reference(st, prm)
    zx = st[S_CX] + st[S_VX] / w
    zy = st[S_CY] + st[S_VY] / w

    rate_x = zddx - kz_x * (zx - zdx)
    rate_y = zddy - kz_y * (zy - zdy)
    px = zx - rate_x / w + act[0]
    py = zy - rate_y / w + act[1]

    hx = prm[P_HALF_X]
    hy = prm[P_HALF_Y]
    sx = st[S_SUP_X]
    sy = st[S_SUP_Y]
    px_sat = clamp(px, sx - hx, sx + hx)
    py_sat = clamp(py, sy - hy, sy + hy)
    saturated = px_sat != px or py_sat != py

    override = 0.0
    tgt_x = st[S_NEXT_X]
    tgt_y = st[S_NEXT_Y]
    if saturated or ctl[C_FORCE_ADJUST] > 0.0:
        remaining = T_cmd - st[S_PHASE]
        if remaining < 0.0:
            remaining = 0.0
        tgt_x = capture_point(sx, zx, w, remaining) + act[4]
        tgt_y = capture_point(sy, zy, w, remaining) + act[5]
        override = 1.0
    elif act[4] != 0.0 or act[5] != 0.0:
        tgt_x = tgt_x + act[4]
        tgt_y = tgt_y + act[5]
        override = 1.0

    # torso rate law realized as a flywheel torque, plus the learned torque
    kd = ctl[C_TORQUE_KD]
    inertia = prm[P_IFLY]
    rate_p = -kphi_p * st[S_PHI_P]
    rate_r = -kphi_r * st[S_PHI_R]
    tq_p = inertia * kd * (rate_p - st[S_DPHI_P]) + act[2]
    tq_r = inertia * kd * (rate_r - st[S_DPHI_R]) + act[3]

    cmd[K_PX] = px_sat
    cmd[K_PY] = py_sat
    cmd[K_TQ_P] = tq_p
    cmd[K_TQ_R] = tq_r
    cmd[K_TGT_X] = tgt_x
    cmd[K_TGT_Y] = tgt_y
    cmd[K_TCMD] = T_cmd
    cmd[K_CZCMD] = cz_cmd
    cmd[K_SAT] = 1.0 if saturated else 0.0
    cmd[K_OVERRIDE] = override


@njit
def apply_command(st, cmd):
    st[S_ZMP_X] = cmd[K_PX]
    st[S_ZMP_Y] = cmd[K_PY]
    st[S_TQ_P] = cmd[K_TQ_P]
    st[S_TQ_R] = cmd[K_TQ_R]
    st[S_TGT_X] = cmd[K_TGT_X]
    st[S_TGT_Y] = cmd[K_TGT_Y]
    st[S_TCMD] = cmd[K_TCMD]
    st[S_CZCMD] = cmd[K_CZCMD]


@njit
def observe(st, out):
    """16-dim support-relative observation."""
    out[0] = st[S_CX] - st[S_SUP_X]
    out[1] = st[S_CY] - st[S_SUP_Y]
    out[2] = st[S_CZ] - st[S_SUP_Z]
    out[3] = st[S_VX]
    out[4] = st[S_VY]
    out[5] = st[S_VZ]
    out[6] = st[S_PHI_P]
    out[7] = st[S_PHI_R]
    out[8] = st[S_DPHI_P]
    out[9] = st[S_DPHI_R]
    out[10] = st[S_ZMP_X] - st[S_SUP_X]
    out[11] = st[S_ZMP_Y] - st[S_SUP_Y]
    out[12] = st[S_SW_X] - st[S_SUP_X]
    out[13] = st[S_SW_Y] - st[S_SUP_Y]
    out[14] = st[S_PHASE] / st[S_TCMD]
    out[15] = st[S_SIDE]


@njit
def termination(st, prm):
    """Return STATUS_* for the current state."""
    if st[S_CZ] < prm[P_FALL_CZ]:
        return STATUS_FELL
    lim = prm[P_FALL_PHI]
    if abs(st[S_PHI_P]) > lim or abs(st[S_PHI_R]) > lim:
        return STATUS_FELL
    dx = st[S_CX] - st[S_SUP_X]
    dy = st[S_CY] - st[S_SUP_Y]
    if math.sqrt(dx * dx + dy * dy) > prm[P_FALL_DIST]:
        return STATUS_FELL
    if not (math.isfinite(st[S_CX]) and math.isfinite(st[S_CY])):
        return STATUS_FELL
    if st[S_TIME] >= prm[P_EP_CAP] - _PHASE_EPS:
        return STATUS_TIMEOUT
    return STATUS_ALIVE


@njit
def env_step(st, act, prm, ctl, push_t, push_fx, push_fy, tilt_r, terrain, cmd):
    """Control cycle followed by the physics substeps of one control period."""
    control(st, act, prm, ctl, cmd)
    apply_command(st, cmd)
    n = int(ctl[C_SUBSTEPS])
    dt = ctl[C_PHYS_DT]
    for _ in range(n):
        physics_substep(st, prm, dt, push_t, push_fx, push_fy, tilt_r, terrain)
    st[S_NSTEPS] += 1.0
    status = termination(st, prm)
    st[S_STATUS] = status
    return status


@njit
def batch_env_step(states, acts, prm, ctl, push_t, push_fx, push_fy,
                   tilt_r, terrain, obs_out, cmd_out):
    """Step every environment row once; rows already terminated are skipped."""
    n_env = states.shape[0]
    for i in range(n_env):
        if states[i, S_STATUS] != STATUS_ALIVE:
            continue
        env_step(states[i], acts[i], prm, ctl, push_t[i], push_fx[i],
                 push_fy[i], tilt_r[i], terrain[i], cmd_out[i])
        observe(states[i], obs_out[i])


@njit
def batch_observe(states, obs_out):
    for i in range(states.shape[0]):
        observe(states[i], obs_out[i])


# ---------------------------------------------------------------------------
# learning
# ---------------------------------------------------------------------------
@njit
def gae(rewards, values, next_values, terminal, boundary, gamma, lam):
    """Generalized advantage estimation over a flat, time-ordered buffer.

    ``boundary[t]`` marks the last step of a trajectory segment (terminal or
    truncated); ``terminal[t]`` additionally zeroes the bootstrap value.
    ``next_values[t]`` is V(s_{t+1}) as seen by that step.
    """
    n = rewards.shape[0]
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if boundary[t]:
            running = 0.0
        nv = 0.0 if terminal[t] else next_values[t]
        delta = rewards[t] + gamma * nv - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv
