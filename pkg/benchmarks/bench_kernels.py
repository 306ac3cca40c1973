"""Benchmark the compiled kernels against the pure-NumPy fallback.

Times the fused potential kernel (forward and parameter backward, with and
without an input tangent), the baseline JVP kernel, and one full training
step per backend. Run as:

    python benchmarks/bench_kernels.py [--batch 512] [--repeats 300]
"""

import argparse
import os
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

from sympflow import kernels
from sympflow.flows import SympFlowModel
from sympflow.systems import get_system
from sympflow.training import TrainingConfig, train


def timeit(fn, repeats):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3  # ms


def bench_kernels(backends, batch, repeats):
    rng = np.random.default_rng(0)
    rows = []
    for d in (1, 2):
        sizes = [d + 1, 32, 32, 1]
        Ws = [np.ascontiguousarray(rng.normal(size=(o, i)) * 0.5) for i, o in zip(sizes[:-1], sizes[1:])]
        bs = [rng.normal(size=o) * 0.2 for o in sizes[1:]]
        U = rng.normal(size=(batch, d + 1))
        T = rng.normal(size=(batch, d + 1))
        gb = rng.normal(size=(batch, d + 1))
        gdb = rng.normal(size=(batch, d + 1))
        for label, tangent in (("grad", None), ("grad+tangent", T)):
            res = {}
            for name, mod in backends.items():
                out = mod.potential_fused(Ws, bs, 0, U, tangent, need_cache=True)
                fwd = timeit(lambda: mod.potential_fused(Ws, bs, 0, U, tangent, need_cache=True), repeats)
                gdot = gdb if tangent is not None else None
                bwd = timeit(lambda: mod.potential_fused_backward(out[4], None, gb, None, gdot), repeats)
                res[name] = (fwd, bwd)
            rows.append((f"potential d={d} {label}", res))
    return rows


def bench_training_step(backends):
    system = get_system("harmonic")
    warm = TrainingConfig(epochs=2, n_pi=512, n_match=512, batch_size=256, seed=0)
    cfg = TrainingConfig(epochs=25, n_pi=512, n_match=512, batch_size=256, seed=0)
    res = {}
    saved = {
        name: getattr(kernels, name)
        for name in ("potential_fused", "potential_fused_backward", "mlp_jvp", "mlp_jvp_backward", "mlp_forward")
    }
    try:
        for name, mod in backends.items():
            for attr in saved:
                setattr(kernels, attr, getattr(mod, attr))
            model = SympFlowModel(1, n_pairs=3, widths=(32, 32), dt=1.0, seed=0)
            train(model, system, warm)
            t0 = time.perf_counter()
            train(model, system, cfg)
            res[name] = (time.perf_counter() - t0) / (cfg.epochs * 2) * 1e3  # ms per step
    finally:
        for attr, fn in saved.items():
            setattr(kernels, attr, fn)
    return res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--repeats", type=int, default=300)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"selected backend: {kernels.IMPLEMENTATION}; available: {', '.join(backends)}")
    print(f"batch={args.batch}, widths=(32, 32), float64, single thread\n")

    rows = bench_kernels(backends, args.batch, args.repeats)
    names = list(backends)
    header = f"{'kernel':28s}" + "".join(f"{n + ' fwd/bwd (ms)':>24s}" for n in names)
    print(header)
    for label, res in rows:
        cells = "".join(f"{res[n][0]:>12.3f}/{res[n][1]:<10.3f}" for n in names)
        print(f"{label:28s}{cells}")
        if len(names) == 2:
            a, b = (res[names[0]], res[names[1]])
            print(f"{'':28s}  speedup x{a[0] / b[0]:.2f} fwd, x{a[1] / b[1]:.2f} bwd")

    print("\nfull training step (harmonic, L=3, width 32, batch 256):")
    for name, ms in bench_training_step(backends).items():
        print(f"  {name:8s} {ms:8.1f} ms/step")


if __name__ == "__main__":
    main()
