"""Time the hot kernels on both backends (numba JIT vs numpy fallback).

Usage:
    python benchmarks/bench_kernels.py [--repeats 5]

Also times a short end-to-end replay under each backend by re-executing
this interpreter with GOSSIPSIM_NO_NUMBA set.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from gossipsim import _kernels

SIM_SNIPPET = """
import time
from gossipsim import protocol, _kernels
cfg = protocol.SimulationConfig(
    n_agents=25, dim=10, batches=5, step=1e-4, horizon=400.0, period=100.0,
    psi_max=10, seed=3, lambda_compute=5.0, lambda_transmit=0.1,
    sampling_interval=500, noise_std=0.01, x0_value=10.0)
protocol.run(cfg)  # warm-up (includes JIT compilation when enabled)
t0 = time.perf_counter()
protocol.run(cfg)
print(f"{_kernels.BACKEND},{time.perf_counter() - t0:.3f}")
"""


def time_fn(fn, *args, repeats: int) -> float:
    fn(*args)  # warm-up / compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(200):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / 200)
    return best


def bench_kernels(repeats: int) -> None:
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, 10)
    c = rng.normal(0, 1, 10)
    noise = rng.normal(0, 1, (5, 10))
    X = rng.normal(0, 1, (64, 8))
    y = (rng.random(64) < 0.5).astype(np.float64)
    w = rng.normal(0, 1, 8)

    cases = [
        ("quad_chain(B=5,d=10)", "quad_chain", (x, c, 1e-4, noise)),
        ("logistic_grad(64x8)", "logistic_grad", (X, y, w)),
        ("logistic_loss(64x8)", "logistic_loss", (X, y, w)),
    ]
    print(f"{'kernel':<22} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for label, name, args in cases:
        t_np = time_fn(_kernels.IMPLEMENTATIONS["numpy"][name], *args, repeats=repeats)
        if "numba" in _kernels.IMPLEMENTATIONS:
            t_nb = time_fn(_kernels.IMPLEMENTATIONS["numba"][name], *args,
                           repeats=repeats)
            print(f"{label:<22} {t_np * 1e6:>10.2f} {t_nb * 1e6:>10.2f} "
                  f"{t_np / t_nb:>8.2f}x")
        else:
            print(f"{label:<22} {t_np * 1e6:>10.2f} {'n/a':>10} {'n/a':>8}")


def bench_simulation() -> None:
    print("\nend-to-end replay (T=400 convergence-style config):")
    for no_numba in ("0", "1"):
        env = dict(os.environ, GOSSIPSIM_NO_NUMBA=no_numba)
        out = subprocess.run([sys.executable, "-c", SIM_SNIPPET],
                             capture_output=True, text=True, env=env)
        if out.returncode != 0:
            print(out.stderr, file=sys.stderr)
            continue
        backend, seconds = out.stdout.strip().split(",")
        print(f"  backend={backend:<6} wall={seconds}s")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {_kernels.BACKEND}\n")
    bench_kernels(args.repeats)
    bench_simulation()
