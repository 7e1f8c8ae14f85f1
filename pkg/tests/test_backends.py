"""The numba kernels and the pure-numpy fallback must agree bit for bit."""

import json
import os
import subprocess
import sys

import pytest

from hybridstab import _jit

SCRIPT = r"""
import json, sys
import numpy as np
from hybridstab import _jit, kernels as K
from hybridstab.control import ControlConfig
from hybridstab.env import VecEnv
from hybridstab.plant import ScenarioSpec
from hybridstab.ppo import ActionBounds, gae_advantages

cfg = ControlConfig()
env = VecEnv(4, ScenarioSpec.named(sys.argv[1]), control=cfg, seed=5, cap=10.0)
obs = env.reset()
bounds = ActionBounds.from_control(cfg)
rng = np.random.default_rng(0)
for _ in range(300):
    res = env.step(bounds.squash(rng.normal(0, 0.5, (4, K.ACT_DIM))))
r = rng.normal(size=50)
adv = gae_advantages(r, r[::-1], r * 0.5, np.arange(50) % 17 == 0, gamma=0.99, lam=0.95)
print(json.dumps({"backend": _jit.BACKEND, "states": env.states.tobytes().hex(), "obs": res.obs.tobytes().hex(),
                  "adv": adv.tobytes().hex()}))
"""


def _run(pure: bool, scenario: str) -> dict:
    env = dict(os.environ)
    env["HYBRIDSTAB_PURE_NUMPY"] = "1" if pure else "0"
    out = subprocess.run([sys.executable, "-c", SCRIPT, scenario], env=env, capture_output=True, text=True,
                         check=True, timeout=600)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.skipif(_jit.PURE_NUMPY, reason="numba backend unavailable")
@pytest.mark.parametrize("scenario", ["l1", "t1"])
def test_numba_and_numpy_agree_bitwise(scenario):
    fast = _run(False, scenario)
    slow = _run(True, scenario)
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    for key in ("states", "obs", "adv"):
        assert fast[key] == slow[key], key
