"""Hierarchical aggregation of GOP token sequences.

Per GOP, I-frame patch tokens are followed by the motion tokens of every
inter slot; a bidirectional selective scan mixes them and only the first
``N_p`` outputs (the I-frame span) are kept. The per-GOP summaries are then
concatenated and mixed across the whole clip by a stack of bidirectional
scans.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rmr, ssm
from .errors import InvalidInputError, NumericError


@dataclass(frozen=True)
class IFrameTokens:
    matrix: np.ndarray
    p: int
    H: int
    W: int

    @property
    def n_p(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class GopTokenSequence:
    """``tokens`` is ``(L_g, d_s)``; rows ``[0, n_p)`` are the I-frame span,
    then ``slots`` motion spans of ``n_m`` rows each."""

    tokens: np.ndarray
    n_p: int
    n_m: int
    slots: int
    pad_mask: np.ndarray

    @property
    def L_g(self):
        return self.tokens.shape[0]

    def motion_span(self, t):
        start = self.n_p + (t - 1) * self.n_m
        return start, start + self.n_m


@dataclass(frozen=True)
class VideoFeatures:
    matrix: np.ndarray
    K: int
    n_p: int


@dataclass(frozen=True)
class BidirectionalParams:
    forward: ssm.SelectiveParams
    backward: ssm.SelectiveParams

    def __call__(self, X, backend="auto"):
        return ssm.bidirectional(self.forward, self.backward, X, backend=backend)

    @classmethod
    def random(cls, d, Q, seed):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        f, b = ss.spawn(2)
        return cls(ssm.SelectiveParams.random(d, Q, f), ssm.SelectiveParams.random(d, Q, b))

    @classmethod
    def feedthrough(cls, d, Q):
        """Output equals input: unit feedthrough forward, silent backward."""
        return cls(ssm.SelectiveParams.feedthrough(d, Q, 1.0),
                   ssm.SelectiveParams.feedthrough(d, Q, 0.0))


@dataclass(frozen=True)
class HmssConfig:
    p: int = 8
    d_s: int = 32
    Q: int = 4
    global_depth: int = 2
    embed_seed: int = 0
    ssm_seed: int = 0
    backend: str = "auto"


def token_length(n_p, T_g, n_m):
    return n_p + (T_g - 1) * n_m


def _embed_weight(p, d_s, seed):
    rng = np.random.default_rng(seed)
    fan_in = p * p * 3
    return rng.standard_normal((fan_in, d_s)) / np.sqrt(fan_in)


def patchify(frame, p):
    H, W, C = frame.shape
    if H % p or W % p:
        raise InvalidInputError(f"{H}x{W} frame is not divisible into {p}x{p} patches")
    return (frame.reshape(H // p, p, W // p, p, C)
                 .transpose(0, 2, 1, 3, 4)
                 .reshape(-1, p * p * C))


def patch_embed(frame, p, d_s, seed, bias=None):
    """Fixed seeded linear embedding of non-overlapping ``p x p`` patches."""
    frame = np.asarray(frame)
    H, W, _ = frame.shape
    patches = patchify(frame.astype(np.float64) / 255.0, p)
    tokens = patches @ _embed_weight(p, d_s, seed)
    if bias is not None:
        tokens = tokens + bias
    return IFrameTokens(tokens, p, H, W)


def assemble_gop_tokens(iframe_tokens, motion_tokens, pad_mask=None):
    """Row-stack ``[E_I; E_M^1; ...; E_M^{T_g-1}]``."""
    E_I = iframe_tokens.matrix if isinstance(iframe_tokens, IFrameTokens) else np.asarray(iframe_tokens)
    motion = [np.asarray(m) for m in motion_tokens]
    slots = len(motion)
    if pad_mask is None:
        pad_mask = np.ones(slots, bool)
    pad_mask = np.asarray(pad_mask, bool)
    if len(pad_mask) != slots:
        raise InvalidInputError(f"{slots} motion token blocks but pad_mask has {len(pad_mask)} slots")
    n_m = motion[0].shape[0] if motion else 0
    d_s = E_I.shape[1]
    for m in motion:
        if m.shape != (n_m, d_s):
            raise InvalidInputError(f"motion block shape {m.shape} != {(n_m, d_s)}")
    tokens = np.concatenate([E_I, *motion]) if motion else E_I.copy()
    return GopTokenSequence(tokens, E_I.shape[0], n_m, slots, pad_mask)


def local_scan(seq, params, backend="auto"):
    """Bidirectional scan over the whole GOP, keep the first ``n_p`` rows."""
    X = seq.tokens.copy()
    for t in np.flatnonzero(~seq.pad_mask) + 1:
        s, e = seq.motion_span(t)
        X[s:e] = 0.0
    return params(X, backend=backend)[:seq.n_p]


def global_mix(summaries, layers, backend="auto"):
    if not summaries:
        raise InvalidInputError("global_mix needs at least one GOP summary")
    shape = summaries[0].shape
    for s in summaries:
        if s.shape != shape:
            raise InvalidInputError(f"summary shape {s.shape} != {shape}")
    X = np.concatenate(summaries)
    if isinstance(layers, BidirectionalParams):
        layers = [layers]
    for layer in layers:
        X = layer(X, backend=backend)
    return VideoFeatures(X, len(summaries), shape[0])


def default_params(config):
    """Seeded local block and global stack."""
    ss = np.random.SeedSequence(config.ssm_seed)
    local_seed, *global_seeds = ss.spawn(1 + config.global_depth)
    local = BidirectionalParams.random(config.d_s, config.Q, local_seed)
    stack = [BidirectionalParams.random(config.d_s, config.Q, s) for s in global_seeds]
    return local, stack


def _workers():
    try:
        return max(1, int(os.environ.get("REMORA_THREADS", "1")))
    except ValueError:
        return 1


def gop_summary(gop, refiner, config, local_params):
    E_I = patch_embed(gop.iframe, config.p, config.d_s, config.embed_seed)
    c = refiner.config
    motion = np.zeros((gop.slots, c.n_tokens, c.d_s))
    real = gop.real_count
    if real:
        motion[:real] = rmr.embed_motion_batch(refiner, gop.motion[:real])
    seq = assemble_gop_tokens(E_I, list(motion), gop.pad_mask)
    return local_scan(seq, local_params, backend=config.backend)


def aggregate(stream, refiner, config=None, params=None):
    """Stream of GOPs -> ``(K * N_p, d_s)`` clip features."""
    config = config or HmssConfig()
    if refiner.config.d_s != config.d_s:
        raise InvalidInputError(f"refiner d_s={refiner.config.d_s} != hmss d_s={config.d_s}")
    local, stack = params or default_params(config)

    def one(k_gop):
        k, gop = k_gop
        try:
            return gop_summary(gop, refiner, config, local)
        except NumericError as exc:
            raise NumericError(f"GOP {k}: {exc}", where=(k, exc.where)) from exc

    workers = _workers()
    if workers > 1 and len(stream.gops) > 1:
        with ThreadPoolExecutor(workers) as pool:
            summaries = list(pool.map(one, enumerate(stream.gops)))
    else:
        summaries = [one(item) for item in enumerate(stream.gops)]
    return global_mix(summaries, stack, backend=config.backend)


def project_to_prompt(features, d_llm, seed=0, weight=None):
    """Fixed seeded linear map into the language model's embedding width."""
    H = features.matrix if isinstance(features, VideoFeatures) else np.asarray(features)
    if weight is None:
        rng = np.random.default_rng(seed)
        weight = rng.standard_normal((H.shape[1], d_llm)) / np.sqrt(H.shape[1])
    weight = np.asarray(weight, np.float64)
    if weight.shape != (H.shape[1], d_llm):
        raise InvalidInputError(f"projection must be {(H.shape[1], d_llm)}, got {weight.shape}")
    return H @ weight


def accounting(n_p, n_m, T_g, K):
    L_g = token_length(n_p, T_g, n_m)
    return {
        "N_p": n_p, "N_m": n_m, "T_g": T_g, "K": K, "L_g": L_g,
        "flat_tokens": K * L_g, "global_tokens": K * n_p,
        "compression": L_g / n_p,
    }
