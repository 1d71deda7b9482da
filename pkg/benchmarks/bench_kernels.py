"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Kernel timings call both
backends directly; the end-to-end rows re-import the package with
``MOMAKD_PURE_PYTHON`` set in a subprocess.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from momakd import _pykernels

try:
    from momakd import _ckernels
except ImportError:
    _ckernels = None

END_TO_END = r"""
import time
from momakd import gradcheck as gc, kernels
from momakd.config import RunConfig
from momakd import trainer
t = time.perf_counter()
for s in range(5):
    gc.gradient_check(gc.tiny_config(s))
g = time.perf_counter() - t
cfg = RunConfig(input_dim=32, embed_dim=16, proj_dim=16, batch_size=16, target_per_class=8,
                pretrain_epochs=2, epochs=20)
_, ck = trainer.pretrain_teacher(cfg)
t = time.perf_counter()
trainer.distill_run(cfg, ck)
print(kernels.BACKEND, g, time.perf_counter() - t)
"""


def cases(rng):
    x = rng.standard_normal((64, 16))
    g = rng.standard_normal((64, 16))
    y = _pykernels.softmax_rows(x)
    q, k, v, go = (rng.standard_normal((32, 16)) for _ in range(4))
    _, w = _pykernels.mha_forward(q, k, v, 4)
    emb = rng.standard_normal((400, 16))
    labels = rng.integers(0, 4, 400).astype(np.int64)
    return {
        "softmax_rows 64x16": lambda m: m.softmax_rows(x),
        "softmax_rows_backward": lambda m: m.softmax_rows_backward(y, g),
        "log_softmax_rows 64x16": lambda m: m.log_softmax_rows(x),
        "mha_forward 32x16 h4": lambda m: m.mha_forward(q, k, v, 4),
        "mha_backward 32x16 h4": lambda m: m.mha_backward(q, k, v, w, go, 4),
        "silhouette 400x16": lambda m: m.silhouette_samples(emb, labels, 4),
    }


def bench(fn, repeat):
    number = 50
    best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
    return best * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels are not built; run 'pip install -e . --no-build-isolation' first")
        return 1
    print(f"{'kernel':<26} {'python us':>10} {'cython us':>10} {'speedup':>8}")
    for name, fn in cases(np.random.default_rng(0)).items():
        py = bench(lambda: fn(_pykernels), args.repeat)
        cy = bench(lambda: fn(_ckernels), args.repeat)
        print(f"{name:<26} {py:>10.1f} {cy:>10.1f} {py / cy:>7.2f}x")
    if args.skip_end_to_end:
        return 0
    print()
    print(f"{'backend':<10} {'gradcheck x5 s':>15} {'distill run s':>14}")
    for pure in ("0", "1"):
        env = dict(os.environ)
        if pure == "1":
            env["MOMAKD_PURE_PYTHON"] = "1"
        else:
            env.pop("MOMAKD_PURE_PYTHON", None)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True,
                             check=True).stdout.split()
        print(f"{out[0]:<10} {float(out[1]):>15.2f} {float(out[2]):>14.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
