"""Time the compiled kernels against the pure-Python fallback.

Each path runs in its own interpreter because the backend is chosen at
import time from ``OXSIM_NO_NUMBA``.  Usage::

    python3 benchmarks/bench_kernels.py [--cells 2] [--cycles 20] [--events 200000]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from oxsim import _accel, bench as B, hourglass_cell as H

cells, cycles, events = map(int, sys.argv[1:4])
p = H.load_preset("hfo2")
out = {"numba": _accel.NUMBA_ENABLED}

# warm-up pays the JIT cost outside the timed region
H.kmc_events(H.CellState(6, 24, 2, True), 0.3, 600.0, 100, np.random.default_rng(0), p)
t = time.perf_counter()
H.kmc_events(H.CellState(6, 24, 2, True), 0.3, 600.0, events, np.random.default_rng(1), p)
out["kmc_events_s"] = time.perf_counter() - t

B.run_single_pulse(B.ExperimentConfig(n_cells=1, n_cycles=1, master_seed=0))
t = time.perf_counter()
m = B.run_single_pulse(B.ExperimentConfig(n_cells=cells, n_cycles=cycles, master_seed=1))
out["single_pulse_s"] = time.perf_counter() - t
out["rows"] = len(m)
print(json.dumps(out))
"""


def run(no_numba, args):
    env = dict(os.environ, OXSIM_NO_NUMBA="1" if no_numba else "0")
    r = subprocess.run([sys.executable, "-c", CHILD, str(args.cells), str(args.cycles), str(args.events)],
                       capture_output=True, text=True, env=env, check=True)
    return json.loads(r.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=2)
    ap.add_argument("--cycles", type=int, default=20)
    ap.add_argument("--events", type=int, default=200_000)
    args = ap.parse_args(argv)
    fast, slow = run(False, args), run(True, args)
    print("%-16s %12s %12s %8s" % ("task", "numba [s]", "python [s]", "speedup"))
    for key in ("kmc_events_s", "single_pulse_s"):
        print("%-16s %12.4f %12.4f %7.1fx" % (key[:-2], fast[key], slow[key], slow[key] / fast[key]))
    if not fast["numba"]:
        print("note: numba not available, both columns ran the fallback")


if __name__ == "__main__":
    main()
