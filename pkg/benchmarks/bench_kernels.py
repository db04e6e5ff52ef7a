"""Compare the numba and numpy kernel backends on training-sized workloads.

Runs each low-level op and one full forward/backward training step per
backend, reporting wall time and effective GFLOP/s. Backends live in
separate subprocesses because the choice is fixed at import time.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--quick]
"""

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, os, sys, time
import numpy as np

from relief import kernels, ops
from relief.unet import UNetConfig, UNetModel

repeat = int(sys.argv[1])
quick = bool(int(sys.argv[2]))


def timeit(fn, *args):
    fn(*args)  # warm up (JIT compile on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


results = {"backend": kernels.BACKEND, "cases": []}
rng = np.random.default_rng(0)

n, h, w = (2, 128, 128) if quick else (8, 256, 256)
for ci, co in ((16, 16), (32, 32), (64, 64)):
    hh, ww = h // (ci // 16), w // (ci // 16)
    x = rng.standard_normal((n, ci, hh, ww)).astype(np.float32)
    wt = rng.standard_normal((co, ci, 3, 3)).astype(np.float32)
    b = np.zeros(co, dtype=np.float32)
    g = rng.standard_normal((n, co, hh, ww)).astype(np.float32)

    flops = 2.0 * n * hh * ww * co * ci * 9
    t = timeit(kernels.conv2d_forward, x, wt, b)
    results["cases"].append({"op": f"conv_fwd {ci}->{co} {hh}x{ww}", "s": t,
                             "gflops": flops / t / 1e9})
    t = timeit(kernels.conv2d_backward, x, wt, g)
    results["cases"].append({"op": f"conv_bwd {ci}->{co} {hh}x{ww}", "s": t,
                             "gflops": 2 * flops / t / 1e9})

x = rng.standard_normal((n, 16, h, w)).astype(np.float32)
t = timeit(kernels.maxpool2_forward, x)
results["cases"].append({"op": f"maxpool_fwd 16ch {h}x{w}", "s": t, "gflops": None})

levels, base, tile = (2, 8, 64) if quick else (3, 16, 128)
config = UNetConfig(levels=levels, base_channels=base, tile_size=tile,
                    crop_border=tile // 8, dropout_rates=(0.1,) * levels)
model = UNetModel.build(config, np.random.default_rng(0))
xb = rng.random((2, 1, tile, tile)).astype(np.float32)
tb = rng.random((2, 1, tile, tile)).astype(np.float32)
drop = np.random.default_rng(1)


def step():
    y, cache = model.forward_train(xb, drop)
    _, grad = ops.mse_loss(y, tb)
    model.backward(cache, grad)


t = timeit(step)
results["cases"].append({"op": f"train_step L{levels} b{base} {tile}px", "s": t,
                         "gflops": None})
print(json.dumps(results))
"""


def run_backend(name: str, repeat: int, quick: bool) -> dict:
    env = dict(os.environ, RELIEF_BACKEND=name)
    proc = subprocess.run(
        [sys.executable, "-c", _WORKER, str(repeat), str(int(quick))],
        env=env, capture_output=True, text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"{name} worker failed:\n{proc.stderr}")
    return json.loads(proc.stdout.splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timed repetitions, best-of")
    ap.add_argument("--quick", action="store_true", help="smaller shapes, for CI")
    args = ap.parse_args()

    reports = []
    for name in ("numpy", "numba"):
        try:
            reports.append(run_backend(name, args.repeat, args.quick))
        except RuntimeError as e:
            print(f"skipping {name}: {e}", file=sys.stderr)
    if not reports:
        return 1

    by_op: dict = {}
    for rep in reports:
        for case in rep["cases"]:
            by_op.setdefault(case["op"], {})[rep["backend"]] = case

    names = [r["backend"] for r in reports]
    head = f"{'op':<28}" + "".join(f"{n + ' (s)':>14}" for n in names)
    if len(names) == 2:
        head += f"{'speedup':>10}"
    print(head)
    print("-" * len(head))
    for op, entry in by_op.items():
        row = f"{op:<28}"
        for n in names:
            row += f"{entry[n]['s']:>14.4f}" if n in entry else f"{'-':>14}"
        if len(names) == 2 and all(n in entry for n in names):
            row += f"{entry[names[0]]['s'] / entry[names[1]]['s']:>9.1f}x"
        print(row)
    for rep in reports:
        gf = [c["gflops"] for c in rep["cases"] if c["gflops"]]
        if gf:
            print(f"{rep['backend']}: peak conv throughput {max(gf):.1f} GFLOP/s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
