"""Time the numba and numpy kernel backends on the Morse LvNE (484 states).

Each backend runs in its own interpreter so that ``QBILINEAR_BACKEND`` is
honoured exactly as it would be for a user.  Usage::

    python3 benchmarks/bench_kernels.py [--steps 2000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _worker(steps: int, repeat: int) -> dict:
    import numpy as np

    from qbilinear import constants as c
    from qbilinear import kernels
    from qbilinear.experiments import morse_lvne
    from qbilinear.propagation import operators
    from qbilinear.system import Pure, initial_state

    system = morse_lvne()
    ops = operators(system)
    x0 = initial_state(Pure(0), system)
    h = 0.1 * c.FS
    t = np.arange(steps + 1) * h
    u = 0.003 * np.sin(np.pi * t / t[-1]) ** 2 * np.cos(0.017 * t)
    u = u[None, :]

    # warm-up compiles the numba kernels and fills caches
    kernels.rk4_propagate(ops, x0, u[:, :5], h, every=4)
    adj = ops.adjoint()
    coef = -np.sin(np.pi * t / t[-1])[None, :] ** 2
    # any smooth trajectory serves as the costate partner
    partner = np.ascontiguousarray(kernels.rk4_propagate(ops, 0.1 * x0, u, h, every=1))
    kernels.oct_sweep(ops, adj, x0, partner[:5], u[:, :5], coef[:, :5], 1.0, h, False, x_e=system.x_e)

    out = {"backend": kernels.backend(), "dim": system.dim, "steps": steps}
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        X = kernels.rk4_propagate(ops, x0, u, h, every=steps)
        best = min(best, time.perf_counter() - t0)
    out["rk4_us_per_step"] = 1e6 * best / steps
    out["rk4_final_norm"] = float(np.linalg.norm(X[-1]))

    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        field, _ = kernels.oct_sweep(ops, adj, x0, partner, u, coef, 1.0, h, False, x_e=system.x_e)
        best = min(best, time.perf_counter() - t0)
    out["sweep_us_per_step"] = 1e6 * best / steps
    out["sweep_field_norm"] = float(np.linalg.norm(field))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(_worker(args.steps, args.repeat)))
        return 0

    results = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, QBILINEAR_BACKEND=backend)
        proc = subprocess.run([sys.executable, __file__, "--worker", "--steps", str(args.steps),
                               "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(proc.stdout.strip().splitlines()[-1]))

    print(f"{'backend':8s} {'rk4 us/step':>12s} {'sweep us/step':>14s}")
    for r in results:
        print(f"{r['backend']:8s} {r['rk4_us_per_step']:12.1f} {r['sweep_us_per_step']:14.1f}")
    a, b = results
    print(f"numpy/numba speed ratio: rk4 {b['rk4_us_per_step'] / a['rk4_us_per_step']:.2f}, "
          f"sweep {b['sweep_us_per_step'] / a['sweep_us_per_step']:.2f}")
    drift = abs(a["rk4_final_norm"] - b["rk4_final_norm"]) + abs(a["sweep_field_norm"] - b["sweep_field_norm"])
    print(f"backend agreement (norm drift): {drift:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
