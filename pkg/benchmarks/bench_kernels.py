"""Plant stepping throughput: numba kernels versus the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at import
time by HYBRIDSTAB_PURE_NUMPY.

    python3 benchmarks/bench_kernels.py [--envs 8] [--steps 2000]
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from hybridstab import _jit, kernels as K
from hybridstab.control import ControlConfig
from hybridstab.env import VecEnv, baseline_action
from hybridstab.plant import ScenarioSpec

n_envs, n_steps = int(sys.argv[1]), int(sys.argv[2])
cfg = ControlConfig()
env = VecEnv(n_envs, ScenarioSpec.named("l1"), control=cfg, seed=0)
env.reset()
a = baseline_action(cfg, n_envs)
env.step(a)  # compile outside the timed region
t0 = time.perf_counter()
for _ in range(n_steps):
    env.step(a)
dt = time.perf_counter() - t0
print(json.dumps({"backend": _jit.BACKEND, "seconds": dt, "env_steps_per_s": n_envs * n_steps / dt,
                  "checksum": float(np.sum(env.states[:, K.S_CX]))}))
"""


def run(pure: bool, n_envs: int, n_steps: int) -> dict:
    env = dict(os.environ, HYBRIDSTAB_PURE_NUMPY="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", CHILD, str(n_envs), str(n_steps)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--envs", type=int, default=8)
    ap.add_argument("--steps", type=int, default=2000, help="control steps (0.02 s each) per environment")
    args = ap.parse_args()
    fast = run(False, args.envs, args.steps)
    # the interpreted path is slow; time fewer steps and report the rate
    slow = run(True, args.envs, max(args.steps // 20, 10))
    for r in (fast, slow):
        print(f"{r['backend']:>6}: {r['env_steps_per_s']:12.0f} env-steps/s  ({r['seconds']:.2f} s)")
    print(f"speed-up {fast['env_steps_per_s'] / slow['env_steps_per_s']:.1f}x")


if __name__ == "__main__":
    main()
