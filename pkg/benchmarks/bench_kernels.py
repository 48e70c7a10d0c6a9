"""Compiled vs pure-numpy kernels: timing and bit-equality.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from filmpol import kernels
from filmpol.mosaic import DemosaicMethod, RawMosaic, demosaic


def timeit(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def cases(rng):
    x = rng.standard_normal((4, 40, 32, 32)).astype(np.float32)
    cols = rng.standard_normal((4 * 32 * 32, 40 * 9)).astype(np.float32)
    raw = RawMosaic(rng.random((128, 128)))
    return {
        "im2col3x3 4x40x32x32 f32": lambda: kernels.im2col3x3(x),
        "col2im3x3 4x40x32x32 f32": lambda: kernels.col2im3x3(cols, x.shape),
        "demosaic edge-aware 128x128": lambda: demosaic(raw, DemosaicMethod.EDGE_AWARE).as_array(),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args(argv)

    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    rows = []
    for name in cases(np.random.default_rng(0)):
        res = {}
        for backend in ("cython", "python"):
            kernels.use_backend(backend)
            fn = cases(np.random.default_rng(0))[name]
            res[backend] = (timeit(fn, args.repeat), fn())
        same = np.array_equal(res["cython"][1], res["python"][1])
        rows.append({"kernel": name, "cython_ms": 1e3 * res["cython"][0],
                     "python_ms": 1e3 * res["python"][0],
                     "speedup": res["python"][0] / res["cython"][0], "bit_identical": same})
    kernels.use_backend("cython")

    print(f"{'kernel':<30}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}  identical")
    for r in rows:
        print(f"{r['kernel']:<30}{r['cython_ms']:11.3f}{r['python_ms']:11.3f}"
              f"{r['speedup']:9.2f}  {r['bit_identical']}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
    return 0 if all(r["bit_identical"] for r in rows) else 2


if __name__ == "__main__":
    raise SystemExit(main())
