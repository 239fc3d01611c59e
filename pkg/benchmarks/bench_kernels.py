"""Compiled vs pure-Python kernels: IBM-1 E-step, span search, and a full EM run.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--pairs 2000]
"""
import argparse
import time

import numpy as np

from xlqa import kernels
from xlqa.aligner import train_ibm1
from xlqa.synth import cipher_bitext


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def estep_inputs(rng, n_sent, n_pairs=5000):
    src = rng.integers(3, 12, n_sent)
    tgt = rng.integers(3, 12, n_sent)
    offsets = np.concatenate([[0], np.cumsum(src * tgt)[:-1]]).astype(np.int64)
    flat = rng.integers(0, n_pairs, int((src * tgt).sum())).astype(np.int64)
    return flat, offsets, src.astype(np.int64), tgt.astype(np.int64), rng.random(n_pairs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pairs", type=int, default=2000, help="sentence pairs for the E-step and EM runs")
    args = ap.parse_args()
    if kernels.compiled is None:
        print("compiled kernels not built; only the Python timings are shown")
    impls = [("python", kernels.python)] + ([("cython", kernels.compiled)] if kernels.compiled else [])
    rng = np.random.default_rng(0)
    flat, offsets, src, tgt, probs = estep_inputs(rng, args.pairs)
    start, end = rng.standard_normal(384), rng.standard_normal(384)
    corpus, _ = cipher_bitext(args.pairs, 200, seed=0)

    cases = {
        f"ibm1_estep ({args.pairs} pairs)":
            lambda k: k.ibm1_estep(flat, offsets, src, tgt, probs, np.zeros_like(probs)),
        "best_span (384 positions, max 30)": lambda k: k.best_span(start, end, 30),
        f"train_ibm1 x5 ({args.pairs} cipher pairs)": lambda k: train_ibm1(corpus, 5, kernel=k),
    }
    print(f"{'case':<40}" + "".join(f"{name:>12}" for name, _ in impls) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = [best_of(lambda: fn(k), args.repeat) for _, k in impls]
        speed = f"{times[0] / times[1]:.1f}x" if len(times) == 2 else "-"
        print(f"{label:<40}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + f"{speed:>10}")


if __name__ == "__main__":
    main()
