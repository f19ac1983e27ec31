#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Kernel micro-benchmarks run both backends in-process; the end-to-end sampler
benchmark re-runs this interpreter with DYNABATCH_NO_EXT=1 so backend
selection happens at import, exactly as it does for users.

Usage: python benchmarks/bench_kernels.py [--samples N]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
from array import array

import numpy as np


def _time(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_rows(n: int):
    from dynabatch._kernels import _pykernels as pk

    try:
        from dynabatch._kernels import _ckernels as ck
    except ImportError:
        ck = None

    rng = np.random.default_rng(0)
    durs = rng.uniform(0.3, 40.0, n)
    toks = rng.integers(0, 1000, n).astype(np.int64)
    dbounds = np.sort(rng.uniform(1.0, 40.0, 30))
    tb = np.sort(rng.integers(1, 1000, (30, 2)), axis=1).astype(np.int64)
    tb = np.maximum.accumulate(tb, axis=0).reshape(-1)
    sorted_durs = np.sort(durs)
    adur = array("d", durs.tolist())
    atok = array("q", toks.tolist())

    cases = {
        "allocate_chunk (strict)": lambda impl: impl.allocate_chunk(
            durs, toks, dbounds, tb, 2, False, 25.0
        ),
        "allocate_chunk (flexible)": lambda impl: impl.allocate_chunk(
            durs, toks, dbounds, tb, 2, True, 25.0
        ),
        "greedy_bounds (30 bins)": lambda impl: impl.greedy_bounds(sorted_durs, 30),
        "padding_cells": lambda impl: impl.padding_cells(adur, atok, 0, n, 40.0, 1000),
        "prefix_duration": lambda impl: impl.prefix_duration(adur, 0, 1e9),
        "uniform_below x100k": lambda impl: [
            impl.uniform_below(k, 60) for k in range(100_000)
        ],
    }
    rows = []
    for name, fn in cases.items():
        py_t = _time(lambda: fn(pk))
        c_t = _time(lambda: fn(ck)) if ck is not None else float("nan")
        rows.append((name, py_t, c_t))
    return rows, ck is not None


def sampler_throughput(n: int, force_pure: bool) -> float:
    """Samples/second through the full sampler pipeline, in a fresh process."""
    code = f"""
import time
from dynabatch.ingest import DEFAULT_SYNTH_SPEC, generate
from dynabatch.bucketing import estimate_duration_bins, estimate_token_subbins
from dynabatch.oomptimizer import TRANSFORMER_LIKE, oomptimize
from dynabatch.sampler import DynamicBucketingSampler, PerBucketSizes, SamplerConfig
from dataclasses import replace
import dynabatch

spec_src = replace(DEFAULT_SYNTH_SPEC, count={n})
samples = list(generate(spec_src))
spec1d = estimate_duration_bins(samples, 30)
spec = estimate_token_subbins(samples, spec1d, 2)
sizes = oomptimize(spec, TRANSFORMER_LIKE, 48000.0)
cfg = SamplerConfig(
    batching_mode=PerBucketSizes(sizes=sizes), spec=spec,
    buffer_capacity=max(10000, sizes.max_size), tps_threshold=25.0,
    allocation="flexible",
)
t0 = time.perf_counter()
sampler = DynamicBucketingSampler(samples, cfg)
total = sum(len(b) for b in sampler)
dt = time.perf_counter() - t0
print(dynabatch.KERNEL_BACKEND, total / dt)
"""
    env = dict(os.environ)
    if force_pure:
        env["DYNABATCH_NO_EXT"] = "1"
    else:
        env.pop("DYNABATCH_NO_EXT", None)
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    backend, rate = out.stdout.split()
    print(f"  backend={backend:7s} throughput={float(rate):12,.0f} samples/s")
    return float(rate)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=1_000_000)
    args = parser.parse_args()

    print(f"kernel micro-benchmarks over {args.samples:,} samples")
    rows, have_ext = kernel_rows(args.samples)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':{width}}  {'python':>10}  {'cython':>10}  {'speedup':>8}")
    for name, py_t, c_t in rows:
        speedup = py_t / c_t if c_t == c_t else float("nan")
        print(f"{name:{width}}  {py_t:>9.4f}s  {c_t:>9.4f}s  {speedup:>7.1f}x")
    if not have_ext:
        print("(compiled backend unavailable; cython column is NaN)")

    print()
    print("end-to-end sampler (bucketing + allocation + batch formation), 200k samples")
    pure = sampler_throughput(200_000, force_pure=True)
    fast = sampler_throughput(200_000, force_pure=False)
    print(f"  end-to-end speedup: {fast / pure:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
