"""Time the hot paths under both kernel backends.

Each backend runs in its own interpreter because ``TRAPSAC_NUMBA`` is read at
import time.  Usage::

    python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

CASES = {
    "env_step": "random-action environment steps",
    "observation": "observation encoding",
    "rule_action": "rule controller decisions",
    "adam_75k": "Adam step on the actor parameters",
    "sac_update": "one full SAC update (batch 64)",
}


def measure(repeat: int) -> dict:
    import numpy as np

    from trapsac import _accel
    from trapsac.approx import Adam
    from trapsac.env import TrapEnv, encode_observation
    from trapsac.heuristic import RuleController
    from trapsac.sac import Batch, DiscreteSac, SacConfig

    rng = np.random.default_rng(0)
    env = TrapEnv()
    env.reset(0)
    actions = rng.integers(0, 9, 100_000)
    state = {"i": 0, "seed": 1}

    def env_step():
        if env.done:
            env.reset(state["seed"])
            state["seed"] += 1
        env.step(int(actions[state["i"] % actions.size]))
        state["i"] += 1

    ctl = RuleController()
    agent = DiscreteSac(SacConfig(), rng)
    buf = agent.actor.buffer
    grad = rng.normal(size=buf.size).astype(buf.dtype)
    opt = Adam(buf.copy(), 5e-4)
    params = buf.copy()
    n = 64
    batch = Batch(rng.normal(size=(n, 26)).astype(np.float32), rng.integers(0, 9, n),
                  rng.normal(size=n), rng.normal(size=(n, 26)).astype(np.float32),
                  np.zeros(n), np.zeros(n, bool), rng.integers(0, 9, n))

    def one(fn, number):
        fn()  # warm up (and compile)
        return min(timeit.repeat(fn, number=number, repeat=repeat)) / number

    return {
        "backend": _accel.backend(),
        "env_step": one(env_step, 2000),
        "observation": one(lambda: encode_observation(env.world), 5000),
        "rule_action": one(lambda: ctl(env.world), 2000),
        "adam_75k": one(lambda: opt.step(params, grad), 200),
        "sac_update": one(lambda: agent.update(batch), 30),
    }


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return 0
    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, TRAPSAC_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        r = json.loads(out.stdout)
        results[r["backend"]] = r
    fast, slow = results["numba"], results["numpy"]
    print(f"{'case':<14}{'numba us':>12}{'numpy us':>12}{'speedup':>10}  what")
    for key, what in CASES.items():
        print(f"{key:<14}{1e6 * fast[key]:>12.1f}{1e6 * slow[key]:>12.1f}"
              f"{slow[key] / fast[key]:>9.1f}x  {what}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
