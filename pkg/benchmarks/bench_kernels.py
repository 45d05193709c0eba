"""Compiled vs numpy kernels, per kernel and for one training epoch.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import contextlib
import time
import timeit

import numpy as np

from metrec import kernels
from metrec.dataset import split_train_test
from metrec.evaluate import evaluate
from metrec.trainer import TrainConfig, train


@contextlib.contextmanager
def use_backend(impl):
    saved = {name: getattr(kernels, name) for name in kernels._NAMES}
    for name in kernels._NAMES:
        setattr(kernels, name, getattr(impl, name))
    try:
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def kernel_cases(rng):
    b, d, m, h = 256, 32, 3700, 64
    ha, hp, hn = (rng.normal(size=(b, d)) for _ in range(3))
    u, items = rng.normal(size=d), rng.normal(size=(m, d))
    scores, excluded = rng.normal(size=m), rng.random(m) < 0.05
    target, idx, vals = np.zeros((h, 6040)), rng.integers(0, 6040, size=b), rng.normal(size=(b, h))
    p, g, mm, vv = (rng.normal(size=(h, 6040)) for _ in range(4))
    vv = np.abs(vv)
    return {
        "hinge_triplets (256x32)": lambda k: k.hinge_triplets(ha, hp, hn, 1.0),
        "row_distances (3700x32)": lambda k: k.row_distances(u, items),
        "topk_indices (k=20 of 3700)": lambda k: k.topk_indices(scores, 20, excluded),
        "scatter_add_columns (256 -> 64x6040)": lambda k: k.scatter_add_columns(target, idx, vals),
        "adam_update (64x6040)": lambda k: k.adam_update(p, g, mm, vv, 1e-3, 0.9, 0.999, 1e-8, 10),
    }


def synthetic_split(rng, n_users=943, n_items=1682, per_user=47):
    # ML-100K-sized random implicit data with a popularity skew
    pop = rng.zipf(1.3, size=n_items).astype(float)
    pop /= pop.sum()
    positives = [np.sort(rng.choice(n_items, size=per_user, replace=False, p=pop)) for _ in range(n_users)]
    return split_train_test(positives, 0.8, seed=0, n_items=n_items)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    impls = kernels.backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(impls)} (active: {kernels.BACKEND})")
    print(f"{'kernel':40s}" + "".join(f"{n:>14s}" for n in impls) + "   speedup")
    for name, fn in kernel_cases(rng).items():
        times = {}
        for bname, impl in impls.items():
            n = 20
            times[bname] = min(timeit.repeat(lambda: fn(impl), number=n, repeat=args.repeat)) / n
        row = "".join(f"{times[b] * 1e6:12.1f}us" for b in impls)
        speed = f"{times['python'] / times['cython']:8.1f}x" if "cython" in times else ""
        print(f"{name:40s}{row}{speed}")

    split = synthetic_split(rng)
    cfg = TrainConfig(epochs=1)
    print("\none training epoch + full evaluation, ML-100K-sized synthetic data:")
    for bname, impl in impls.items():
        with use_backend(impl):
            t0 = time.perf_counter()
            model, _ = train(cfg, split)
            t1 = time.perf_counter()
            evaluate(model, split, [5, 10, 20])
            t2 = time.perf_counter()
        print(f"  {bname:8s} train {t1 - t0:6.2f}s   evaluate {t2 - t1:6.2f}s")


if __name__ == "__main__":
    main()
