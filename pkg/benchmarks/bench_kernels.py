"""Compiled kernels against the pure-Python path.

Each workload runs in a fresh interpreter, once with numba and once with
PRACSIM_NO_NUMBA=1. Compile time is excluded by a warm-up call.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = """
import json, sys, time
from pracsim import attacks as A
from pracsim._kernels import HAVE_NUMBA
from pracsim.params import DramTimings, PracParams
from pracsim.sim import QPRAC, ChannelState, ops_to_array, run_pattern

name, repeat = sys.argv[1], int(sys.argv[2])
t = DramTimings(rows_per_bank=4096)
ops = ops_to_array([("ACT", 0, (13 * i) % 4000) for i in range(200_000)])
short = DramTimings(t_refw=1_000_000)
work = {
    "run_pattern 200k ACTs": lambda: run_pattern(ChannelState(PracParams(n_bo=8), t, QPRAC,
                                                              n_banks=1), ops),
    "wave r1=64": lambda: A.wave_attack("psq", 64),
    "fill-escape M=64, 1 ms": lambda: A.fill_escape(64, timings=short),
}[name]
work()  # warm-up: compile or import
best = float("inf")
for _ in range(repeat):
    t0 = time.perf_counter()
    work()
    best = min(best, time.perf_counter() - t0)
print(json.dumps({"numba": HAVE_NUMBA, "seconds": best}))
"""

WORKLOADS = ("run_pattern 200k ACTs", "wave r1=64", "fill-escape M=64, 1 ms")


def measure(name: str, no_numba: bool, repeat: int) -> float:
    env = dict(os.environ)
    env.pop("PRACSIM_NO_NUMBA", None)
    if no_numba:
        env["PRACSIM_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKER, name, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    res = json.loads(out.stdout)
    assert res["numba"] is not no_numba
    return res["seconds"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'workload':<26}{'numba s':>10}{'python s':>11}{'speedup':>9}")
    for name in WORKLOADS:
        fast = measure(name, False, args.repeat)
        slow = measure(name, True, 1)
        print(f"{name:<26}{fast:>10.4f}{slow:>11.3f}{slow / fast:>8.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
