"""Compiled kernels vs the NumPy fallback on the two hot loops.

    python benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import json
import sys

import numpy as np

from remora import _backend
from remora.bench import measure
from remora.codec import _candidates
from remora.ssm import SelectiveParams
from remora.synthflow import MotionSpec, render_clip


def block_match_case(size, search_range):
    clip, _ = render_clip(MotionSpec("rotate", theta=0.05), 2, size, size, 0)
    cand = _candidates(search_range)
    return lambda k: k.block_match_sad(clip.frames[1], clip.frames[0], 4, 4, cand)


def scan_case(L, d=32, Q=4):
    sp = SelectiveParams.random(d, Q, 0)
    X = np.random.default_rng(0).standard_normal((L, d))
    delta, B, C = sp.project(X)
    args = (X, np.ascontiguousarray(delta), sp.A, np.ascontiguousarray(B), np.ascontiguousarray(C),
            sp.D, np.zeros((d, Q)))
    return lambda k: k.selective_scan_core(*args)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)
    if _backend.compiled is None:
        print("compiled kernels are not built; run `pip install -e .`", file=sys.stderr)
        return 1
    cases = [("block_match 64x64 r4", block_match_case(64, 4)),
             ("block_match 384x384 r4", block_match_case(384, 4)),
             ("selective_scan L=4096", scan_case(4096)),
             ("selective_scan L=32768", scan_case(32768))]
    for name, case in cases:
        row = {"case": name}
        for label, k in (("compiled", _backend.compiled), ("python", _backend.python)):
            row[f"{label}_seconds"], _ = measure(lambda: case(k), args.repeats)
        row["speedup"] = row["python_seconds"] / row["compiled_seconds"]
        print(json.dumps(row))
    return 0


if __name__ == "__main__":
    sys.exit(main())
