"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 2000] [--end-to-end]

Per-kernel timings are taken in-process through ``backend_module``. The
end-to-end figure runs one reference cell (unideal, seed 0) in a fresh
interpreter per backend, since backend selection happens at import.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from unideal import kernels

SHAPES = [(32, 3), (32, 10), (256, 10), (1024, 100)]

CELL = """
import time
from unideal.config import parse_config
from unideal.federation import Method
from unideal.suite import run_cell
cfg = parse_config({path!r})
t0 = time.perf_counter()
run_cell(cfg, Method("unideal"), 0)
print(time.perf_counter() - t0)
"""


def _cases(mod, b, c, rng):
    t = rng.normal(size=(b, c))
    s = rng.normal(size=(b, c))
    mask = (rng.random(b) < 0.5).astype(np.uint8)
    labels = rng.integers(0, c, size=b).astype(np.int64)
    p, q = mod.softmax_rows(t), mod.softmax_rows(s)
    return {
        "softmax_rows": lambda: mod.softmax_rows(t),
        "row_kl": lambda: mod.row_kl(p, q),
        "cross_entropy": lambda: mod.cross_entropy(t, labels),
        "mutual_scores": lambda: mod.mutual_scores(t, s, kernels.COSINE, 1e-8),
        "masked_kl": lambda: mod.masked_kl(t, s, mask),
    }


def per_kernel(repeat: int) -> None:
    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    print(f"{'kernel':<15} {'B x C':>10} " + " ".join(f"{b + ' us':>11}" for b in backends) + (f" {'speedup':>8}" if len(backends) == 2 else ""))
    for b, c in SHAPES:
        timings = {}
        for name in backends:
            cases = _cases(kernels.backend_module(name), b, c, np.random.default_rng(0))
            timings[name] = {k: min(timeit.repeat(f, number=repeat, repeat=3)) / repeat * 1e6 for k, f in cases.items()}
        for k in timings["python"]:
            row = f"{k:<15} {f'{b}x{c}':>10} " + " ".join(f"{timings[n][k]:>11.2f}" for n in backends)
            if len(backends) == 2:
                row += f" {timings['python'][k] / timings['cython'][k]:>7.1f}x"
            print(row)
    if len(backends) == 1:
        print("compiled extension not built; only the numpy backend was timed")


def end_to_end() -> None:
    cfg = Path(__file__).resolve().parent.parent / "configs" / "acceptance.yaml"
    code = CELL.format(path=str(cfg))
    for name, flag in (("python", "1"), ("cython", "")):
        if name == "cython" and not kernels.compiled_available():
            continue
        env = dict(os.environ, UNIDEAL_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        print(f"one reference cell (50 rounds, 3 clients) with {name} kernels: {float(out.stdout):.2f} s")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=2000)
    parser.add_argument("--end-to-end", action="store_true", help="also time a full training cell per backend")
    args = parser.parse_args()
    per_kernel(args.repeat)
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
