"""Compiled extension vs numpy fallback for the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Reports the best-of-N wall time of each backend on the workloads the
library actually runs: Philox blocks for a training batch's noise, and
tail-biting Viterbi for a TBCC evaluation chunk. It also reports one GRU
training step, which runs on numpy/BLAS under either backend.
"""
import argparse
import time

import numpy as np

from fblab import _purepy, kernels
from fblab.baselines import TBCC, tbcc_branch_costs, tbcc_encode


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)

    ctr = rng.integers(0, 2**32, (500 * 12 * 2 // 2, 4), dtype=np.uint64).astype(np.uint32)
    nxt, _ = TBCC.tables()
    bits = rng.integers(0, 2, (500, 6)).astype(np.uint8)
    branch = np.ascontiguousarray(tbcc_branch_costs(tbcc_encode(bits) + rng.normal(0, 0.9, (500, 18))))

    rows = [
        ("philox4x32 (6000 blocks)", lambda impl: impl.philox4x32(ctr, 1, 2)),
        ("viterbi tail-biting (500 x K=6)", lambda impl: impl.viterbi_tailbiting(branch, nxt)),
    ]
    print(f"{'kernel':<34s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for name, fn in rows:
        tp = best_of(lambda: fn(_purepy), args.repeat)
        if kernels.BACKEND == "cython":
            tc = best_of(lambda: fn(kernels), args.repeat)
            print(f"{name:<34s} {tp * 1e3:10.2f}ms {tc * 1e3:10.2f}ms {tp / tc:7.1f}x")
        else:
            print(f"{name:<34s} {tp * 1e3:10.2f}ms {'-':>12s}")

    from fblab.channel import PURPOSE_TRAIN
    from fblab.config import TrainConfig
    from fblab.trainer import FeedbackCode, generate_batch, sample_ids

    cfg = TrainConfig(K=4, N=12, J=500, batch=500, epochs=1, enc_hidden=32, dec_hidden=32)
    code = FeedbackCode.init(cfg)
    data = generate_batch(0, cfg, sample_ids(PURPOSE_TRAIN, 0, 500))

    def step():
        for p in code.parameters():
            p.grad = None
        loss, _ = code.loss(*data)
        loss.backward()

    print(f"{'GRU train step, batch 500 (numpy)':<34s} {best_of(step, args.repeat) * 1e3:10.2f}ms")


if __name__ == "__main__":
    main()
