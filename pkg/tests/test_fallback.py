"""The pure-Python path must agree with the compiled kernels."""

from __future__ import annotations

import json
import os
import subprocess
import sys

SCRIPT = """
import json
from pracsim import attacks as A
from pracsim._kernels import HAVE_NUMBA
from pracsim.params import DramTimings, PracParams
from pracsim.sim import QPRAC_PROACTIVE, ChannelState, run_pattern
t = DramTimings(rows_per_bank=256, banks_per_channel=2, t_refw=400_000)
ops = [("ACT", i % 2, (7 * i) % 41) for i in range(3000)]
stats = run_pattern(ChannelState(PracParams(n_bo=6), t, QPRAC_PROACTIVE), ops,
                    multi_window=True).to_json_dict()
wave = A.wave_attack("psq", 24, PracParams(n_mit=2)).to_json_dict()
fe = A.fill_escape(64, timings=t).to_json_dict()
print(json.dumps({"numba": HAVE_NUMBA, "stats": stats, "wave": wave, "fe": fe}, sort_keys=True))
"""


def _run(no_numba: bool) -> dict:
    env = dict(os.environ)
    env.pop("PRACSIM_NO_NUMBA", None)
    if no_numba:
        env["PRACSIM_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True, env=env,
                         check=True)
    return json.loads(out.stdout)


def test_pure_python_path_matches_compiled():
    fast, slow = _run(False), _run(True)
    assert fast.pop("numba") is True and slow.pop("numba") is False
    assert fast == slow
