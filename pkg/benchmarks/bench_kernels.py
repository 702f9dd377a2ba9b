"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 5] [--json out.json]

Each case runs on both backends, checks that the outputs agree and reports the
best-of-N wall time and the speedup.
"""

import argparse
import json
import time

import numpy as np

from sdeicl import _backend
from sdeicl.integrate import NoiseStream
from sdeicl.systems import get_system


def _best(fn, repeats):
    out, times = None, []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _normals(mod, n):
    def run():
        buf = np.empty(n)
        mod.fill_normals(0x5EED, 0, buf)
        return buf
    return run


def _pairs(mod, system_id, n_traj):
    system = get_system(system_id)
    pv = np.repeat(system.param_array(system.defaults())[None], n_traj, 0)
    x0 = np.repeat(np.array([[0.5 * (lo + hi) for lo, hi in system.ic_box]]), n_traj, 0)
    keys = np.array([NoiseStream(0, system.id, 0, 0, w).key for w in range(n_traj)], dtype=np.uint64)

    def run():
        r = mod.simulate_pairs(system, pv, x0, keys, system.horizon_steps_coarse, system.stride_k,
                               system.dt_fine, 1e8)
        return np.stack([r[0], r[1]])
    return run


CASES = [
    ("normals 1e6", lambda m: _normals(m, 1_000_000)),
    ("ou pairs x20", lambda m: _pairs(m, "ou", 20)),
    ("stochastic_lorenz pairs x20", lambda m: _pairs(m, "stochastic_lorenz", 20)),
    ("duffing pairs x20", lambda m: _pairs(m, "duffing", 20)),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results here")
    args = ap.parse_args(argv)
    if _backend.kernels is _backend.fallback:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rows = []
    print(f"{'case':32s} {'compiled s':>11s} {'fallback s':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, make in CASES:
        tc, oc = _best(make(_backend.kernels), args.repeats)
        tf, of = _best(make(_backend.fallback), max(1, args.repeats // 2))
        diff = float(np.max(np.abs(np.asarray(oc) - np.asarray(of))))
        rows.append({"case": name, "compiled_s": tc, "fallback_s": tf, "speedup": tf / tc, "max_abs_diff": diff})
        print(f"{name:32s} {tc:11.4f} {tf:11.4f} {tf / tc:8.1f} {diff:11.3g}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
