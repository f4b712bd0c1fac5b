"""Time every kernel in both flavours and report the numba speedup.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel is checked for agreement before it is timed, so a fast but wrong
compiled path shows up as an error instead of a good number. The numba column
includes nothing of the compile cost: every function is warmed up first.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from bytescan import kernels as K
from bytescan.evm.opcodes import IMMEDIATE_WIDTHS


@dataclass
class Case:
    name: str
    numpy_fn: Callable
    numba_fn: Callable
    args: tuple
    tolerance: float = 1e-12


def best_of(fn: Callable, args: tuple, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def _close(a, b, tol: float) -> bool:
    if isinstance(a, tuple):
        return all(_close(x, y, tol) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=tol, atol=tol)


def build_cases(scale: float, rng: np.random.Generator) -> list[Case]:
    n_code = int(200_000 * scale)
    code = rng.integers(0, 256, n_code, dtype=np.uint8)
    n_rows, width = int(8192 * scale), 32
    ids = rng.integers(0, 1000, n_rows)
    grads = rng.standard_normal((n_rows, width))
    t, b, h = 256, 32, max(4, int(64 * scale))
    xw = rng.standard_normal((t, b, 4 * h))
    u = 0.3 * rng.standard_normal((h, 4 * h))
    hs, cs, acts = K.lstm_scan_forward_numpy(xw, u)
    dh = rng.standard_normal((t, b, h))
    rows = int(32 * 4 * 256 * scale)
    z = rng.standard_normal((rows, 256))
    keep = rng.random((rows, 256)) > 0.1
    keep[:, 0] = True
    y = K.masked_softmax_numpy(z, keep)
    g = rng.standard_normal(z.shape)
    return [
        Case("instruction_starts", K.instruction_starts_numpy, K.instruction_starts_numba, (code, IMMEDIATE_WIDTHS), 0),
        Case("scatter_add_rows", K.scatter_add_rows_numpy, K.scatter_add_rows_numba, (ids, grads, 1000)),
        Case("lstm_scan_forward", K.lstm_scan_forward_numpy, K.lstm_scan_forward_numba, (xw, u)),
        Case("lstm_scan_backward", K.lstm_scan_backward_numpy, K.lstm_scan_backward_numba, (dh, acts, cs, u)),
        Case("masked_softmax", K.masked_softmax_numpy, K.masked_softmax_numba, (z, keep)),
        Case("softmax_backward", K.softmax_backward_numpy, K.softmax_backward_numba, (y, g)),
    ]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="multiplies every problem size")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1

    cases = build_cases(args.scale, np.random.default_rng(args.seed))
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    failed = False
    for case in cases:
        ref = case.numpy_fn(*case.args)
        got = case.numba_fn(*case.args)  # also triggers compilation
        if not _close(ref, got, case.tolerance):
            print(f"{case.name:<20} MISMATCH between backends", file=sys.stderr)
            failed = True
            continue
        t_np = best_of(case.numpy_fn, case.args, args.repeat)
        t_nb = best_of(case.numba_fn, case.args, args.repeat)
        print(f"{case.name:<20} {1e3 * t_np:>10.2f} {1e3 * t_nb:>10.2f} {t_np / t_nb:>7.1f}x")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
