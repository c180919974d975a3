"""Compare the compiled and numpy kernels on local operator application.

Usage: python3 bench/benchmark.py [--repeat N]

Prints one line per (qubits, arity) case with the median time of each
backend and the speed ratio, then an end-to-end timing of compiled-circuit
verification under both backends.
"""

from __future__ import annotations

import argparse
import os
import statistics
import subprocess
import sys
import timeit

import numpy as np

from mqtm import _fallback

try:
    from mqtm import _kernels
except ImportError:
    _kernels = None

END_TO_END = """
import time, numpy as np
from mqtm import kernels
from mqtm.compiler import Circuit, verify_compiled
c = Circuit(3, [("H", (0,)), ("CNOT", (0, 1)), ("T", (1,)), ("CNOT", (1, 2)), ("H", (2,))])
t = time.perf_counter()
r = verify_compiled(c, 20, 5000, np.random.default_rng(0))
print(kernels.BACKEND, round(time.perf_counter() - t, 3), r.passed)
"""


def _case(n: int, k: int, rng: np.random.Generator):
    state = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    op = rng.normal(size=(1 << k, 1 << k)) + 1j * rng.normal(size=(1 << k, 1 << k))
    positions = tuple(int(p) for p in rng.choice(n, size=k, replace=False))
    return np.ascontiguousarray(state), np.ascontiguousarray(op), positions


def _median(fn, repeat: int, number: int) -> float:
    return statistics.median(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'qubits':>6} {'arity':>5} {'numpy_us':>10} {'cython_us':>10} {'speedup':>8}")
    for n in (2, 4, 6, 8, 10, 12, 14):
        for k in (1, 2):
            state, op, pos = _case(n, k, rng)
            number = max(10, 20000 >> n)
            t_py = _median(lambda: _fallback.apply_local(state, n, op, pos), args.repeat, number)
            if _kernels is not None:
                np.testing.assert_allclose(_kernels.apply_local(state, n, op, pos),
                                           _fallback.apply_local(state, n, op, pos), atol=1e-12)
                t_cy = _median(lambda: _kernels.apply_local(state, n, op, pos), args.repeat, number)
                print(f"{n:>6} {k:>5} {t_py * 1e6:>10.2f} {t_cy * 1e6:>10.2f} {t_py / t_cy:>8.2f}")
            else:
                print(f"{n:>6} {k:>5} {t_py * 1e6:>10.2f} {'-':>10} {'-':>8}")
    print("end-to-end verify_compiled (3 qubits, 5 gates, 20 trials):")
    for env in ({}, {"MQTM_PURE_PYTHON": "1"}):
        out = subprocess.run([sys.executable, "-c", END_TO_END], capture_output=True, text=True,
                             env={**os.environ, **env}, check=True)
        print("  " + out.stdout.strip())
    return 0


if __name__ == "__main__":
    sys.exit(main())
