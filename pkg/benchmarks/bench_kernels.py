#!/usr/bin/env python3
"""Time the recurrent scan kernels: compiled extension vs numpy reference.

Runs the GRU and LSTM forward/backward scans at a few batch shapes and
prints best-of-N wall times per backend plus the speedup. Agreement
between the two implementations is asserted before timing so a broken
build fails loudly instead of producing a fast wrong number.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--sizes small|full]
"""

import argparse
import time

import numpy as np

from undertone.kernels import reference

try:
    from undertone.kernels import _scan as compiled
except ImportError:
    compiled = None

# (batch, length, d_in, d_hidden)
SMALL = ((16, 12, 16, 8), (32, 16, 32, 16))
FULL = SMALL + ((64, 32, 64, 32), (128, 48, 128, 64))


def _best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _row(label, ref_t, com_t):
    if com_t is None:
        print(f"  {label:<14} reference {ref_t * 1e3:8.2f} ms")
    else:
        print(f"  {label:<14} reference {ref_t * 1e3:8.2f} ms   "
              f"compiled {com_t * 1e3:8.2f} ms   x{ref_t / com_t:5.1f}")


def bench_shape(shape, repeat):
    b, l, d, h = shape
    rng = np.random.default_rng(b * 1000 + l)
    x = np.ascontiguousarray(rng.normal(size=(b, l, d)))
    lengths = np.ascontiguousarray(
        rng.integers(1, l + 1, size=b, dtype=np.int64))
    g3 = [np.ascontiguousarray(rng.normal(size=(d + h, h)) * 0.3)
          for _ in range(3)]
    g4 = [np.ascontiguousarray(rng.normal(size=(d + h, h)) * 0.3)
          for _ in range(4)]
    grad = np.ascontiguousarray(rng.normal(size=(b, l, h)))

    print(f"B={b} L={l} D={d} H={h}")

    h_ref = reference.gru_scan_forward(x, lengths, *g3)
    cases = [("gru forward", "gru_scan_forward", (x, lengths, *g3)),
             ("gru backward", "gru_scan_backward", (x, lengths, *g3,
                                                    h_ref, grad))]
    hl_ref, cl_ref = reference.lstm_scan_forward(x, lengths, *g4)
    cases += [("lstm forward", "lstm_scan_forward", (x, lengths, *g4)),
              ("lstm backward", "lstm_scan_backward", (x, lengths, *g4,
                                                       hl_ref, cl_ref, grad))]

    for label, name, args in cases:
        ref_fn = getattr(reference, name)
        ref_out = ref_fn(*args)
        if compiled is not None:
            com_fn = getattr(compiled, name)
            com_out = com_fn(*args)
            ref_tup = ref_out if isinstance(ref_out, tuple) else (ref_out,)
            com_tup = com_out if isinstance(com_out, tuple) else (com_out,)
            for a, b_ in zip(ref_tup, com_tup):
                np.testing.assert_allclose(a, b_, atol=1e-10)
            _row(label, _best_of(ref_fn, args, repeat),
                 _best_of(com_fn, args, repeat))
        else:
            _row(label, _best_of(ref_fn, args, repeat), None)
    print()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    parser.add_argument("--sizes", choices=("small", "full"), default="full")
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not built; timing reference only\n")
    for shape in SMALL if args.sizes == "small" else FULL:
        bench_shape(shape, args.repeat)


if __name__ == "__main__":
    main()
