"""Time the compiled kernel against the pure-Python fallback.

Runs the workloads the library actually leans on — single-trajectory
endpoint integration, ensemble shooting, the variational flow and a full
classify_point — once per backend and reports the speedup.

Usage: python benchmarks/compare_backends.py [--M 400] [--repeats 3]
"""

import argparse
import math
import time

import numpy as np

from ratetip import backend
from ratetip.classify import ShootingConfig, classify_point, integration_time
from ratetip.frozen import frozen_orbit, monodromy, orbit_radii
from ratetip.model import SystemParams

PARAMS = SystemParams(a=0.1, b=1.0, omega=3.0, r=0.1, lambda_max=8.0)


def seed_ring(m, t0):
    u_s, _ = orbit_radii(PARAMS.a, PARAMS.b)
    rho = math.sqrt(u_s) + 1e-3
    lam0 = PARAMS.lambda_max / (1.0 + math.exp(-PARAMS.r * PARAMS.lambda_max * t0))
    phase = 2.0 * np.pi * np.arange(m) / m
    return np.column_stack([lam0 + rho * np.cos(phase), rho * np.sin(phase),
                            np.full(m, lam0)])


def bench(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--M", type=int, default=400, help="ensemble size")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    T = integration_time(PARAMS.r, PARAMS.lambda_max, 0.01)
    one = seed_ring(1, -T)
    ring = seed_ring(args.M, -T)
    a, b, om, r, lmax = (PARAMS.a, PARAMS.b, PARAMS.omega, PARAMS.r,
                         PARAMS.lambda_max)
    orbit = frozen_orbit(PARAMS, "stable", "past")

    y_var = np.empty(12)
    y_var[:3] = orbit.point(0.0)
    y_var[3:] = np.eye(3).ravel(order="F")

    workloads = {
        "single trajectory (2T)": lambda: backend.integrate_endpoint(
            backend.SYS_EXTENDED, a, b, om, r, lmax, one[0].copy(), 2 * T,
            1e-9, 1e-12, np.inf, 400.0),
        f"ensemble endpoints (M={args.M})": lambda: backend.ensemble_endpoints(
            a, b, om, r, lmax, ring, 2 * T, 1e-9, 1e-12, np.inf, 400.0),
        "variational flow (1 period)": lambda: backend.integrate_endpoint(
            backend.SYS_VARIATIONAL, a, b, om, r, lmax, y_var.copy(),
            orbit.period, 1e-12, 1e-14, np.inf, 1e6),
        f"classify_point (M={args.M})": lambda: classify_point(
            0.1, 0.15, ShootingConfig(M=args.M)),
    }

    names = ["python"] + (["compiled"] if backend.have_compiled() else [])
    if len(names) == 1:
        print("compiled kernel not built; timing the fallback only")

    times = {}
    for name in names:
        backend.use(name)
        for label, fn in workloads.items():
            times[name, label] = bench(fn, args.repeats)
    backend.use("auto")

    width = max(len(label) for label in workloads)
    header = f"{'workload':<{width}}  " + "".join(f"{n:>12}" for n in names)
    print(header + ("     speedup" if len(names) == 2 else ""))
    print("-" * len(header) + ("-" * 12 if len(names) == 2 else ""))
    for label in workloads:
        row = f"{label:<{width}}  "
        for name in names:
            row += f"{times[name, label]:>11.4f}s"
        if len(names) == 2:
            row += f"{times['python', label] / times['compiled', label]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
