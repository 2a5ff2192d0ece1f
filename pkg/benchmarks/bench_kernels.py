"""Benchmark the compiled kernel core against the pure-Python fallback.

Times the kernels that dominate training (gemm shapes of the 784-128-128-128-47
stack at batch 100, elementwise passes, Adam updates, the Jacobi eigensolver)
plus one full mini-batch training step.  Run:

    python benchmarks/bench_kernels.py           # kernel table + train step
    python benchmarks/bench_kernels.py --quick   # fewer repetitions
"""

import argparse
import os
import subprocess
import sys
import time
from array import array

from mlpmine import _kernels_py as PURE

try:
    from mlpmine import _kernels_c as COMPILED
except ImportError:
    COMPILED = None


def _rand(state, n, lo=-1.0, hi=1.0):
    buf = array("d", bytes(8 * n))
    state = PURE.fill_uniform(state, buf, lo, hi)
    return state, buf


def _time(fn, reps):
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def kernel_cases(quick):
    st = 1234
    cases = []

    def gemm(name, m, k, n, reps):
        nonlocal st
        st, a = _rand(st, m * k)
        st, b = _rand(st, k * n)
        out = array("d", bytes(8 * m * n))
        cases.append(
            (name, lambda K: K.matmul_nn(a, b, out, m, k, n), reps, 1)
        )

    gemm("matmul_nn 100x784x128 (input layer)", 100, 784, 128, 30 if quick else 200)
    gemm("matmul_nn 100x128x128 (hidden layer)", 100, 128, 128, 100 if quick else 600)
    gemm("matmul_nn 100x128x47 (output layer)", 100, 128, 47, 100 if quick else 600)

    st, a = _rand(st, 100 * 784)
    st, g = _rand(st, 100 * 128)
    gw = array("d", bytes(8 * 784 * 128))
    cases.append(
        (
            "matmul_tn 784x100x128 (weight grad)",
            lambda K: K.matmul_tn(a, g, gw, 784, 100, 128),
            30 if quick else 200,
            1,
        )
    )

    st, x = _rand(st, 12_800)
    out = array("d", bytes(8 * 12_800))
    cases.append(("relu_fwd 12.8k", lambda K: K.relu_fwd(x, out, 12_800), 200, 20))

    size = 784 * 128 + 128 * 128 * 2 + 128 * 47 + 3 * 128 + 47
    st, p = _rand(st, size)
    st, grad = _rand(st, size)
    m = array("d", bytes(8 * size))
    v = array("d", bytes(8 * size))
    cases.append(
        (
            "adam_update 134k params",
            lambda K: K.adam_update(p, grad, m, v, 0.1, 0.9, 0.999, 1e-8, 3, size),
            30 if quick else 100,
            1,
        )
    )

    st, logits = _rand(st, 100 * 47, -10, 10)
    probs = array("d", bytes(8 * 100 * 47))
    labels = array("q", [i % 47 for i in range(100)])
    gg = array("d", bytes(8 * 100 * 47))

    def soft_xent(K):
        K.softmax_rows(logits, probs, 100, 47)
        K.xent_from_probs(probs, labels, gg, 100, 47)

    cases.append(("softmax+xent 100x47", soft_xent, 200, 20))

    mask = array("d", bytes(8 * 12_800))
    u = array("d", bytes(8 * 12_800))

    def dropout_mask(K):
        K.fill_uniform(99, u, 0.0, 1.0)
        K.mask_leq(u, 0.75, mask, 12_800)

    cases.append(("dropout mask 12.8k", dropout_mask, 100, 10))

    d = 64
    st, raw = _rand(st, d * d)
    sym = array("d", bytes(8 * d * d))
    for i in range(d):
        for j in range(d):
            sym[i * d + j] = raw[i * d + j] + raw[j * d + i]
    ev = array("d", bytes(8 * d))
    vec = array("d", bytes(8 * d * d))

    def jacobi(K):
        work = array("d", sym)
        K.jacobi_eigh(work, ev, vec, d, 1e-12, 100)

    cases.append(("jacobi_eigh d=64", jacobi, 3, 1))
    return cases


def bench_kernels(quick):
    print("%-38s %12s %12s %9s" % ("kernel", "pure (ms)", "compiled", "speedup"))
    print("-" * 75)
    for name, fn, c_reps, pure_reps in kernel_cases(quick):
        t_pure = _time(lambda: fn(PURE), pure_reps) * 1e3
        if COMPILED is None:
            print("%-38s %12.3f %12s %9s" % (name, t_pure, "n/a", "n/a"))
            continue
        t_c = _time(lambda: fn(COMPILED), c_reps) * 1e3
        print("%-38s %12.3f %12.3f %8.0fx" % (name, t_pure, t_c, t_pure / t_c))


TRAIN_STEP_SNIPPET = r"""
import time
from mlpmine import BACKEND
from mlpmine.config import ExperimentConfig
from mlpmine.dataio import Dataset
from mlpmine.harness import train
from mlpmine.linalg import RngState, sample_uniform

n, d = %(n)d, %(d)d
rng = RngState(5)
ds = Dataset(sample_uniform(rng, n, d, 0.0, 1.0), [i %% 47 for i in range(n)], "bench")
cfg = ExperimentConfig(
    architecture=[d, 128, 128, 128, 47], dropout_keep=[0.75, 0.75, 1.0],
    penalty_kind="L1", penalty_lambda=1e-5, optimizer="adam",
    learning_rate=0.001, epochs=1, batch_size=100, seed=1,
)
t0 = time.perf_counter()
result = train(cfg, ds, ds)
dt = time.perf_counter() - t0
assert not result.diverged
per_batch = result.history[0].epoch_seconds / (n / 100)
print("backend=%%s  n=%%d  epoch=%%.3fs  per-batch=%%.1fms  (epoch incl. metrics: %%.3fs)"
      %% (BACKEND, n, result.history[0].epoch_seconds, per_batch * 1e3, dt))
"""


def bench_train_step(quick):
    print(flush=True)
    print("full training epoch, 784-128-128-128-47, dropout 0.75/0.75, L1 1e-5, Adam")
    print("-" * 75, flush=True)
    jobs = [("c", 2000 if quick else 10_000)]
    if COMPILED is None:
        jobs = []
    jobs.append(("python", 200))
    for backend, n in jobs:
        env = dict(os.environ, MLPMINE_BACKEND=backend)
        code = TRAIN_STEP_SNIPPET % {"n": n, "d": 784}
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true", help="fewer repetitions")
    ap.add_argument("--kernels-only", action="store_true", help="skip the train-step benchmark")
    args = ap.parse_args()
    if COMPILED is None:
        print("note: compiled core not built; showing pure-Python timings only\n")
    bench_kernels(args.quick)
    if not args.kernels_only:
        bench_train_step(args.quick)


if __name__ == "__main__":
    main()
