"""Time the compiled and numpy kernel backends on desk-scale layer shapes.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs through the public ops with the backend switched, so the numbers
include dtype conversion and dispatch. Outputs of the two backends are compared
before timing.
"""
from __future__ import annotations

import argparse
import json
import platform
import timeit

import numpy as np

from genmeasures.tensor import (available_backends, conv2d, conv2d_backward, maxpool2_backward,
                                maxpool2_with_argmax, use_backend)

# (batch, height, width, in channels, out channels): first and third blocks of a
# base-width-8 encoder on 32x32 inputs at the training and evaluation batch sizes
SHAPES = [(2, 32, 32, 1, 8), (2, 8, 8, 16, 32), (256, 32, 32, 1, 8), (256, 8, 8, 16, 32)]


def _cases(rng):
    for b, h, w, cin, cout in SHAPES:
        x = rng.standard_normal((b, h, w, cin)).astype(np.float32)
        k = (rng.standard_normal((3, 3, cin, cout)) * 0.1).astype(np.float32)
        bias = np.zeros(cout, np.float32)
        y = rng.standard_normal((b, h, w, cout)).astype(np.float32)
        tag = f"{b}x{h}x{w}x{cin}->{cout}"
        yield f"conv2d {tag}", lambda x=x, k=k, bias=bias: conv2d(x, k, bias)
        yield f"conv2d_backward {tag}", lambda x=x, k=k, y=y: conv2d_backward(x, k, y)
        yield f"maxpool2 {tag}", lambda y=y: maxpool2_with_argmax(y)

        def pool_back(y=y):
            out, idx = maxpool2_with_argmax(y)
            return maxpool2_backward(out, idx, y.shape)

        yield f"maxpool2 fwd+bwd {tag}", pool_back


def _flatten(result):
    if isinstance(result, tuple):
        return [np.asarray(r, dtype=np.float64).ravel() for r in result]
    return [np.asarray(result, dtype=np.float64).ravel()]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)

    backends = available_backends()
    cases = list(_cases(np.random.default_rng(0)))
    results = {}
    for name, fn in cases:
        outs = {}
        for be in backends:
            with use_backend(be):
                outs[be] = _flatten(fn())
                number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
                best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            results.setdefault(name, {})[be] = best
        if len(backends) > 1:
            ref, *rest = outs.values()
            for other in rest:
                for a, b in zip(ref, other):
                    if not np.allclose(a, b, rtol=1e-10, atol=1e-10):
                        raise SystemExit(f"backends disagree on {name}")

    width = max(len(n) for n in results)
    header = f"{'case'.ljust(width)}  " + "  ".join(f"{b:>10}" for b in backends)
    if "cython" in backends:
        header += "  speedup"
    print(f"python {platform.python_version()}, numpy {np.__version__}, best of {args.repeat}")
    print(header)
    for name, t in results.items():
        line = f"{name.ljust(width)}  " + "  ".join(f"{t[b] * 1e3:8.3f}ms" for b in backends)
        if "cython" in backends:
            line += f"  {t['python'] / t['cython']:6.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"backends": backends, "seconds": results}, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
