#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Times the three hot kernels on representative shapes plus one end-to-end
direct fit per task, and prints a speedup table.  Run from anywhere:

    python benchmarks/bench_backends.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from eigfree import _backend


def bench(fn, repeat, inner):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def kernel_cases():
    rng = np.random.default_rng(0)
    cases = []

    for d in (3, 9, 12):
        a = rng.standard_normal((d, d))
        s = a + a.T
        cases.append((f"jacobi_eigh d={d}", "jacobi_eigh", (s,), 200))

    for shape in ((3, 3), (40, 6)):
        a = rng.standard_normal(shape)
        cases.append((f"jacobi_svd {shape[0]}x{shape[1]}", "jacobi_svd", (a,), 200))

    for n, d in ((120, 3), (200, 6), (400, 12)):
        x = rng.standard_normal((n, d))
        e = rng.standard_normal(d)
        e /= np.linalg.norm(e)
        w = rng.uniform(0.0, 1.0, n)
        cases.append((f"weighted_terms {n}x{d}", "weighted_terms", (x, e, w), 500))
    return cases


def fit_cases():
    from eigfree.edgrad import EdGradConfig
    from eigfree.losses import LossParams
    from eigfree.optim import run_direct_fit
    from eigfree.synth import GenConfig, gen_plane, gen_stereo

    plane = gen_plane(GenConfig(seed=1, variant="plane", n_outliers=20))
    stereo = gen_stereo(GenConfig(seed=1, variant="stereo", n_points=100,
                                  n_outliers=40))
    params = LossParams(1000.0, 1e-4)
    params_st = LossParams(10.0, 1e-3)
    guard = EdGradConfig(denom_guard=1e-12)

    def run_edfree():
        run_direct_fit(plane, "edfree", "weights", params, lr=0.1, iters=300)

    def run_edgrad():
        run_direct_fit(stereo, "edgrad", "weights", params_st, lr=0.1,
                       iters=100, edgrad_cfg=guard)

    return [
        ("edfree fit plane 120pts x300it", run_edfree),
        ("edgrad fit stereo 100pts x100it", run_edgrad),
    ]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = _backend.available_backends()
    if "compiled" not in backends:
        print("compiled extension not available; benchmarking python only")

    rows = []
    for label, fname, fargs, inner in kernel_cases():
        times = {}
        for name in backends:
            mod = _backend.get_kernels(name)
            fn = getattr(mod, fname)
            times[name] = bench(lambda: fn(*fargs), args.repeat, inner)
        rows.append((label, times))

    # end-to-end fits run on whatever backend is active, so time them by
    # swapping the dispatch table
    import eigfree.linalg as linalg_mod
    import eigfree.losses as losses_mod

    saved = (_backend.jacobi_eigh, _backend.jacobi_svd, _backend.weighted_terms,
             linalg_mod._backend, losses_mod.weighted_terms)
    try:
        for label, run in fit_cases():
            times = {}
            for name in backends:
                mod = _backend.get_kernels(name)
                _backend.jacobi_eigh = mod.jacobi_eigh
                _backend.jacobi_svd = mod.jacobi_svd
                _backend.weighted_terms = mod.weighted_terms
                losses_mod.weighted_terms = mod.weighted_terms
                times[name] = bench(run, max(2, args.repeat // 2), 1)
            rows.append((label, times))
    finally:
        (_backend.jacobi_eigh, _backend.jacobi_svd, _backend.weighted_terms,
         linalg_mod._backend, losses_mod.weighted_terms) = saved

    width = max(len(r[0]) for r in rows) + 2
    header = f"{'case':<{width}}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, times in rows:
        line = f"{label:<{width}}"
        for b in backends:
            line += f"{times[b] * 1e6:>12.1f}us"
        if len(backends) == 2:
            line += f"{times['python'] / times['compiled']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
