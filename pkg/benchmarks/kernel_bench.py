"""Benchmark the quadrature kernels: compiled extension vs numpy fallback.

Times tensor_h_grad on the per-N default grids and mc_h_grad on the fixed
Monte-Carlo sample set, at batch sizes matching real call sites (single
gauge iterations and the 4096-probe matching scan), and reports the
speedup plus the worst relative disagreement between the two backends.

Usage: python3 benchmarks/kernel_bench.py [--repeat K]
"""

import argparse
import time

import numpy as np

from oscdamp._kernels import get_backend
from oscdamp.geometry import QuadratureConfig, _cos_table, _mc_cosines


def _time_call(fn, *args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat: int) -> int:
    try:
        compiled = get_backend("compiled")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1
    ref = get_backend("numpy")
    cfg = QuadratureConfig()
    rng = np.random.default_rng(0)

    rows = []
    cases = [("tensor", N, None) for N in (1, 2, 3)] + [("mc", 4, 100_000)]
    for kind, N, samples in cases:
        # the matching scan batch (4096) only ever runs on N <= 2 grids;
        # keep the N = 3 case at a size that finishes in seconds
        for batch in (1, 64, 4096 if N <= 2 else 512):
            Z = np.abs(rng.standard_normal((batch, N))) + 0.1
            if kind == "tensor":
                n = cfg.effective_points(N)
                table = _cos_table(n)
                args = (Z, table, cfg.smooth_rel)
                size = f"{n}^{N}"
                f_ref, f_c = ref.tensor_h_grad, compiled.tensor_h_grad
            else:
                table = _mc_cosines(N, samples, 0)
                args = (Z, table, cfg.smooth_rel)
                size = f"{samples} pts"
                f_ref, f_c = ref.mc_h_grad, compiled.mc_h_grad
            h0, g0 = f_ref(*args)
            h1, g1 = f_c(*args)
            dis = max(
                float(np.abs(h0 - h1).max() / np.abs(h0).max()),
                float(np.abs(g0 - g1).max() / max(np.abs(g0).max(), 1e-300)),
            )
            t_ref = _time_call(f_ref, *args, repeat=repeat)
            t_c = _time_call(f_c, *args, repeat=repeat)
            rows.append((kind, N, size, batch, t_ref, t_c, t_ref / t_c, dis))

    hdr = f"{'kernel':8} {'N':>2} {'grid':>10} {'batch':>6} {'numpy [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'max rel diff':>13}"
    print(hdr)
    print("-" * len(hdr))
    for kind, N, size, batch, t_ref, t_c, sp, dis in rows:
        print(f"{kind:8} {N:>2} {size:>10} {batch:>6} {t_ref:>11.4e} {t_c:>13.4e} {sp:>8.1f} {dis:>13.2e}")
    worst = max(r[-1] for r in rows)
    print(f"\nactive backend would be: {get_backend().NAME}")
    print(f"worst backend disagreement: {worst:.2e} (expect <= ~1e-12)")
    return 0 if worst < 1e-10 else 1


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3,
                    help="timing repetitions, best-of (default 3)")
    return run(ap.parse_args().repeat)


if __name__ == "__main__":
    raise SystemExit(main())
