import json
import os
import subprocess
import sys

import numpy as np

_PROBE = """
import json
import numpy as np
from gpcbf import NUMBA_ENABLED
from gpcbf.socp import SafetyConeData, build_program, solve

A = np.array([[0.3], [0.1], [0.5]])
cone = SafetyConeData(A=A, b=np.array([1.0, -0.5, 0.2]), c=np.array([2.0]), d=-1.0)
out = solve(build_program(np.zeros(1), cone), tol=1e-9)
print(json.dumps({"numba": NUMBA_ENABLED, "u": float(out.u[0]), "status": out.status}))
"""


def _run_probe(disable_numba: bool):
    env = dict(os.environ)
    env["GPCBF_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    result = subprocess.run(
        [sys.executable, "-c", _PROBE], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(result.stdout.strip().splitlines()[-1])


def test_env_flag_selects_fallback_and_results_agree():
    jit = _run_probe(disable_numba=False)
    plain = _run_probe(disable_numba=True)
    assert jit["numba"] is True
    assert plain["numba"] is False
    assert jit["status"] == plain["status"] == "optimal"
    assert abs(jit["u"] - plain["u"]) <= 1e-9
