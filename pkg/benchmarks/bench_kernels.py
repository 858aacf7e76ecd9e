"""Benchmark the compiled kernels against the numpy fallback.

Runs the four hot kernels on one synthetic density-test workload and prints
per-backend best-of-N wall times. Outputs are cross-checked for bit equality
before timing, so a reported speedup is never bought with a wrong answer.
"""
import argparse
import time

import numpy as np

from gcotdc._kernels import BACKEND, available_backends
from gcotdc.channel import ChannelConfig, synthesize_bin_profile
from gcotdc.density import build_virtual_grid
from gcotdc.vbcm import compute_compensation


def build_workload(args):
    cfg = ChannelConfig(
        clock_period_ps=4424.78,
        plain_bin_count=25,
        matrix_order=8,
        seed=args.seed,
        width_dispersion=0.3,
    )
    profile = synthesize_bin_profile(cfg)
    rng = np.random.default_rng(args.seed)
    taus = profile.total_ps - rng.uniform(0.0, profile.total_ps, size=args.hits)
    ref = available_backends()["numpy"]
    codes = ref.fine_bins_from_times(profile.edges_ps, taus)
    hist = ref.count_codes(codes, profile.n)
    grid = build_virtual_grid(args.hits, profile.n, profile.n, cfg.clock_period_ps)
    comp = compute_compensation(np.cumsum(hist), grid)
    coe = [rng.integers(1, 1 << args.mbar, size=profile.n, dtype=np.int64) for _ in range(3)]
    return profile, taus, codes, comp, coe


def timed(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--hits", type=int, default=10_000_000, help="events per kernel call")
    parser.add_argument("--repeat", type=int, default=3, help="take the best of N runs")
    parser.add_argument("--mbar", type=int, default=5, help="coefficient fraction bits")
    parser.add_argument("--seed", type=int, default=20260814)
    args = parser.parse_args()

    profile, taus, codes, comp, coe = build_workload(args)
    n_vir = comp.n_vir
    backends = available_backends()
    print(f"selected backend: {BACKEND}; comparing: {', '.join(sorted(backends))}")
    print(f"workload: {args.hits} hits, {profile.n} bins, best of {args.repeat}")

    kernels = {
        "fine_bins_from_times": lambda impl: impl.fine_bins_from_times(profile.edges_ps, taus),
        "count_codes": lambda impl: impl.count_codes(codes, profile.n),
        "occurrences_from_codes": lambda impl: impl.occurrences_from_codes(
            codes, comp.addr_l, comp.addr_m, comp.addr_r, n_vir
        ),
        "measure_from_codes": lambda impl: impl.measure_from_codes(
            codes, comp.addr_l, comp.addr_m, comp.addr_r, *coe, n_vir
        ),
    }

    for name, call in kernels.items():
        times = {}
        outputs = {}
        for backend, impl in sorted(backends.items()):
            times[backend], outputs[backend] = timed(lambda: call(impl), args.repeat)
        reference = outputs["numpy"]
        for backend, out in outputs.items():
            if not np.array_equal(out, reference):
                raise SystemExit(f"{name}: backend {backend} disagrees with numpy")
        line = f"{name:24s}"
        for backend in sorted(times):
            rate = args.hits / times[backend] / 1e6
            line += f"  {backend}: {times[backend] * 1e3:8.2f} ms ({rate:7.1f} Mhit/s)"
        if "cython" in times:
            line += f"  speedup x{times['numpy'] / times['cython']:.2f}"
        print(line)


if __name__ == "__main__":
    main()
