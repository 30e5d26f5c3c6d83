"""Stage timing: selective scan vs a quadratic attention baseline, and the
full aggregation pipeline over growing GOP counts.

Timings are wall-clock medians, taken round-robin across a sweep's sizes.
Peak memory comes from a separate
tracemalloc-instrumented call (NumPy reports its buffers to tracemalloc), so
it measures the stage's peak allocation rather than process RSS and is
approximate.
"""

import gc
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError

HEADER = ("stage-level timings; end-to-end samples/s throughput needs the "
          "language model and is not reproduced here")


@dataclass(frozen=True)
class BenchRecord:
    stage: str
    size: int
    median_seconds: float
    peak_bytes: int
    tokens_per_second: float
    repeats: int
    backend: str

    def as_dict(self):
        return asdict(self)


def attention_baseline(X, block=1024):
    """Naive softmax self-attention over all token pairs.

    Every one of the L x L similarities is materialized, ``block`` rows at a
    time so the largest sweeps fit in memory; the work stays quadratic.
    """
    X = np.asarray(X, np.float64)
    L, d = X.shape
    scale = 1.0 / np.sqrt(d)
    out = np.empty_like(X)
    for s in range(0, L, block):
        S = (X[s:s + block] @ X.T) * scale
        S -= S.max(axis=1, keepdims=True)
        np.exp(S, out=S)
        S /= S.sum(axis=1, keepdims=True)
        out[s:s + block] = S @ X
    return out


def measure(fn, repeats=5):
    """Median wall time of ``fn()`` over ``repeats`` calls, plus peak bytes."""
    if repeats < 1:
        raise InvalidInputError("repeats must be >= 1")
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), _peak_bytes(fn)


def _peak_bytes(fn):
    tracemalloc.start()
    try:
        fn()
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def measure_sweep(fns, repeats=5):
    """``measure`` for a whole sweep, timed round-robin.

    Repeat ``r`` of every size runs before repeat ``r + 1`` of any, so slow
    stretches on a shared host land on all sizes alike instead of skewing
    one doubling ratio.
    """
    if repeats < 1:
        raise InvalidInputError("repeats must be >= 1")
    for fn in fns:
        fn()  # warm-up
    times = [[] for _ in fns]
    gc_was_on = gc.isenabled()
    gc.disable()  # as timeit does
    try:
        for _ in range(repeats):
            for fn, acc in zip(fns, times):
                t0 = time.perf_counter()
                fn()
                acc.append(time.perf_counter() - t0)
    finally:
        if gc_was_on:
            gc.enable()
    return [(statistics.median(t), _peak_bytes(fn)) for fn, t in zip(fns, times)]


def doubling_ratios(records):
    recs = sorted(records, key=lambda r: r.size)
    return [b.median_seconds / a.median_seconds for a, b in zip(recs, recs[1:])]


def power_sweep(lo, hi):
    """Sizes 2**lo ... 2**hi inclusive."""
    return [2 ** e for e in range(lo, hi + 1)]


def _check_sweep(sizes):
    if len(sizes) < 3:
        raise InvalidInputError("a sweep needs at least 3 sizes")
    if list(sizes) != sorted(sizes):
        raise InvalidInputError("sweep sizes must increase")


def sweep_scan(sizes, repeats=5, d=32, Q=4, seed=0, backend="auto"):
    from . import ssm

    _check_sweep(sizes)
    sp = ssm.SelectiveParams.random(d, Q, seed)
    X = np.random.default_rng(seed).standard_normal((max(sizes), d))
    inputs = [np.ascontiguousarray(X[:L]) for L in sizes]
    fns = [lambda x=x: ssm.selective_scan(sp, x, backend=backend) for x in inputs]
    return [BenchRecord("scan", L, t, peak, L / t, repeats, backend)
            for L, (t, peak) in zip(sizes, measure_sweep(fns, repeats))]


def sweep_attention(sizes, repeats=5, d=32, seed=0):
    _check_sweep(sizes)
    X = np.random.default_rng(seed).standard_normal((max(sizes), d))
    inputs = [np.ascontiguousarray(X[:L]) for L in sizes]
    fns = [lambda x=x: attention_baseline(x) for x in inputs]
    return [BenchRecord("attention", L, t, peak, L / t, repeats, "numpy")
            for L, (t, peak) in zip(sizes, measure_sweep(fns, repeats))]


def synthetic_stream(K, config, backend="auto"):
    """A K-GOP stream built from hard-cut synthetic segments of T_g frames."""
    from .codec import compress_clip
    from .synthflow import MotionSpec, render_cut_clip

    rng = np.random.default_rng(config.seed_texture)
    parts = [(MotionSpec("translate", ty=float(rng.uniform(-2, 2)), tx=float(rng.uniform(-2, 2))),
              config.max_gop_len, int(rng.integers(2 ** 31))) for _ in range(K)]
    clip, _ = render_cut_clip(parts, config.H, config.W, config.fps)
    return compress_clip(clip, config.codec(backend))


def sweep_pipeline(sizes, config, repeats=5, backend="auto", refiner=None):
    from .codec import GopStream
    from .hmss import aggregate, default_params
    from .rmr import RefinerParams

    _check_sweep(sizes)
    stream = synthetic_stream(max(sizes), config, backend)
    refiner = refiner or RefinerParams.init(config.refiner(), config.seed_refiner)
    hcfg = config.hmss(backend)
    params = default_params(hcfg)
    subs = [GopStream(stream.gops[:K], stream.header) for K in sizes]
    fns = [lambda sub=sub: aggregate(sub, refiner, hcfg, params) for sub in subs]
    return [BenchRecord("pipeline", K, t, peak, K * config.L_g / t, repeats, backend)
            for K, (t, peak) in zip(sizes, measure_sweep(fns, repeats))]


def to_csv(records):
    lines = ["size,median_seconds,peak_bytes"]
    lines += [f"{r.size},{r.median_seconds:.9g},{r.peak_bytes}" for r in records]
    return "\n".join(lines) + "\n"
