"""Independent numerical oracles used by the tests.

Nothing here imports the package: these are deliberately naive reference
computations (fixed-step RK4, shooting, brute-force sums).
"""

import numpy as np


def rk4_lip(c0, v0, p, omega, duration, h=1e-4):
    """Integrate c'' = omega^2 (c - p) with constant p; returns (c, v) at the end."""
    c = np.array(c0, dtype=float)
    v = np.array(v0, dtype=float)
    p = np.array(p, dtype=float)
    n = int(round(duration / h))
    w2 = omega * omega
    for _ in range(n):
        k1c, k1v = v, w2 * (c - p)
        k2c, k2v = v + 0.5 * h * k1v, w2 * (c + 0.5 * h * k1c - p)
        k3c, k3v = v + 0.5 * h * k2v, w2 * (c + 0.5 * h * k2c - p)
        k4c, k4v = v + h * k3v, w2 * (c + h * k3c - p)
        c = c + h / 6.0 * (k1c + 2 * k2c + 2 * k3c + k4c)
        v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return c, v


def shooting_bvp(f, c0, cf, duration, omega, t_eval, h=1e-4):
    """Two-point BVP of the LIP solved by linear shooting on the initial velocity."""
    f = np.asarray(f, float)
    c0 = np.asarray(c0, float)
    cf = np.asarray(cf, float)
    a, _ = rk4_lip(c0, np.zeros(2), f, omega, duration, h)
    b, _ = rk4_lip(c0, np.ones(2), f, omega, duration, h)
    v0 = (cf - a) / (b - a)
    if t_eval == 0:
        return c0.copy(), v0
    return rk4_lip(c0, v0, f, omega, t_eval, h)


def rk4_linear(A, B, x0, u, duration, h=1e-4):
    """Integrate x' = A x + B u with constant u."""
    x = np.array(x0, float)
    n = int(round(duration / h))
    f = lambda x: A @ x + B @ u
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def brute_force_lambda_return(rewards, values, bootstrap, terminal, gamma, lam):
    """Lambda-return as the explicit (1-lam)-weighted mixture of n-step returns.

    ``values[t]`` is V(s_t); ``bootstrap`` is V(s_T) after the last step (ignored
    when ``terminal``).  Works on a single trajectory.
    """
    T = len(rewards)
    v_next = list(values[1:]) + [0.0 if terminal else bootstrap]
    out = np.zeros(T)
    for t in range(T):
        def n_step(n):
            # n-step return from t, truncated at the trajectory end
            g, disc = 0.0, 1.0
            for k in range(n):
                g += disc * rewards[t + k]
                disc *= gamma
            return g + disc * v_next[t + n - 1]

        horizon = T - t
        total = 0.0
        for n in range(1, horizon):
            total += (1 - lam) * lam ** (n - 1) * n_step(n)
        total += lam ** (horizon - 1) * n_step(horizon)
        out[t] = total
    return out
