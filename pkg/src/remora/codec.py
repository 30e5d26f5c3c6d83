"""Miniature block-matching codec: scene-adaptive GOPs, P-frame motion
estimation, motion compensation and residual coding.

Motion vectors use displacement semantics: a block at ``(y, x)`` in the
current frame is predicted from the reference block at ``(y + dy, x + dx)``.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _backend
from .errors import InvalidConfigError, InvalidInputError, InvariantViolationError


@dataclass(frozen=True)
class VideoClip:
    """``frames`` is a ``(T, H, W, 3)`` uint8 array."""

    frames: np.ndarray
    fps: int = 16

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise InvalidInputError(f"frames must be (T, H, W, 3), got {frames.shape}")
        if frames.shape[0] < 1:
            raise InvalidInputError("a clip needs at least one frame")
        if frames.dtype != np.uint8:
            raise InvalidInputError(f"frames must be uint8, got {frames.dtype}")
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self):
        return self.frames.shape

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class MotionField:
    """Block displacements: ``grid[u, v] = (dy, dx)``, int16."""

    grid: np.ndarray
    block_h: int
    block_w: int

    @classmethod
    def zeros(cls, H, W, block_h, block_w):
        return cls(np.zeros((H // block_h, W // block_w, 2), np.int16), block_h, block_w)

    def validate(self, H, W, search_range=None):
        gh, gw = self.grid.shape[:2]
        if (gh * self.block_h, gw * self.block_w) != (H, W):
            raise InvalidInputError(
                f"motion grid {gh}x{gw} of {self.block_h}x{self.block_w} blocks "
                f"does not tile a {H}x{W} frame")
        if search_range is not None and np.abs(self.grid).max(initial=0) > search_range:
            raise InvariantViolationError("displacement exceeds search range")
        rows = np.arange(gh)[:, None] * self.block_h + self.grid[..., 0]
        cols = np.arange(gw)[None, :] * self.block_w + self.grid[..., 1]
        if ((rows < 0) | (rows + self.block_h > H) | (cols < 0) | (cols + self.block_w > W)).any():
            raise InvariantViolationError("displaced block leaves the reference frame")


@dataclass(frozen=True)
class Gop:
    """One I-frame plus ``T_g - 1`` (motion, residual) slots.

    ``motion`` is ``(T_g-1, H/b_h, W/b_w, 2)`` int16, ``residuals`` is
    ``(T_g-1, H, W, 3)`` int16. Real entries come first; ``pad_mask`` is
    True for them and False for the all-zero padding.
    """

    iframe: np.ndarray
    motion: np.ndarray
    residuals: np.ndarray
    pad_mask: np.ndarray
    block_h: int
    block_w: int

    @property
    def real_count(self):
        return int(np.count_nonzero(self.pad_mask))

    @property
    def length(self):
        """T_k, the number of real frames including the I-frame."""
        return self.real_count + 1

    @property
    def slots(self):
        return len(self.pad_mask)

    def motion_field(self, t):
        """Motion field of inter slot ``t`` (1-based, like frame index)."""
        return MotionField(self.motion[t - 1], self.block_h, self.block_w)

    def padded(self, T_g):
        """Return a copy with ``T_g - 1`` inter slots."""
        slots = T_g - 1
        if slots < self.real_count:
            raise InvalidConfigError(f"T_g={T_g} is shorter than GOP length {self.length}")
        n = self.real_count
        H, W, _ = self.iframe.shape
        motion = np.zeros((slots,) + self.motion.shape[1:], np.int16)
        residuals = np.zeros((slots, H, W, 3), np.int16)
        motion[:n] = self.motion[:n]
        residuals[:n] = self.residuals[:n]
        mask = np.zeros(slots, bool)
        mask[:n] = True
        return Gop(self.iframe, motion, residuals, mask, self.block_h, self.block_w)


@dataclass(frozen=True)
class StreamHeader:
    H: int
    W: int
    block_h: int
    block_w: int
    T_g: int
    fps: int
    scene_threshold: float | None = None
    q: int = 1


@dataclass(frozen=True)
class GopStream:
    gops: list
    header: StreamHeader

    @property
    def K(self):
        return len(self.gops)

    @property
    def gop_lengths(self):
        return [g.length for g in self.gops]


@dataclass(frozen=True)
class CodecConfig:
    block_h: int = 4
    block_w: int = 4
    search_range: int = 4
    max_gop_len: int = 8
    T_g: int = 8
    scene_threshold: float = 0.3
    q: int = 1
    backend: str = field(default="auto", compare=False)

    def validate(self):
        if self.max_gop_len < 1:
            raise InvalidConfigError("max_gop_len must be >= 1")
        if self.T_g < self.max_gop_len:
            raise InvalidConfigError(f"T_g={self.T_g} must be >= max_gop_len={self.max_gop_len}")
        if self.block_h < 1 or self.block_w < 1 or self.search_range < 0 or self.q < 1:
            raise InvalidConfigError("block sizes and q must be positive, search_range >= 0")
        if not 0.0 < self.scene_threshold <= 1.0:
            raise InvalidConfigError("scene_threshold must lie in (0, 1]")


def frame_differences(frames):
    """Normalized mean absolute difference between consecutive frames."""
    f = np.asarray(frames, dtype=np.int16)
    return np.abs(np.diff(f, axis=0)).mean(axis=(1, 2, 3)) / 255.0


def detect_scene_cuts(clip, threshold=0.3):
    if clip is None or len(clip) == 0:
        raise InvalidInputError("empty clip")
    if not 0.0 < threshold <= 1.0:
        raise InvalidConfigError("threshold must lie in (0, 1]")
    diffs = frame_differences(clip.frames)
    return [int(i) + 1 for i in np.flatnonzero(diffs > threshold)]


def segment_gops(T, cuts, max_gop_len):
    """Partition ``[0, T)`` at ``cuts`` and then greedily at ``max_gop_len``."""
    if max_gop_len < 1:
        raise InvalidConfigError("max_gop_len must be >= 1")
    if isinstance(T, VideoClip):
        T = len(T)
    if list(cuts) != sorted(set(cuts)) or any(not 0 < c < T for c in cuts):
        raise InvalidInputError(f"cuts must be sorted, unique and inside (0, {T})")
    bounds = [0, *cuts, T]
    segments = []
    for start, stop in zip(bounds[:-1], bounds[1:]):
        for s in range(start, stop, max_gop_len):
            segments.append((s, min(max_gop_len, stop - s)))
    return segments


@lru_cache(maxsize=None)
def _candidates(search_range):
    offs = [(dy, dx)
            for dy in range(-search_range, search_range + 1)
            for dx in range(-search_range, search_range + 1)]
    offs.sort(key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))
    arr = np.array(offs, dtype=np.int32).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


def block_match(current, reference, block_h=4, block_w=4, search_range=4, backend="auto"):
    """Exhaustive SAD search; ties go to smaller |dy|+|dx|, then smaller (dy, dx)."""
    current = np.ascontiguousarray(current, dtype=np.uint8)
    reference = np.ascontiguousarray(reference, dtype=np.uint8)
    if current.shape != reference.shape or current.ndim != 3:
        raise InvalidInputError(f"frame shapes differ: {current.shape} vs {reference.shape}")
    H, W, _ = current.shape
    if H % block_h or W % block_w:
        raise InvalidInputError(f"{H}x{W} frame is not divisible into {block_h}x{block_w} blocks")
    grid = _backend.get(backend).block_match_sad(
        current, reference, block_h, block_w, _candidates(search_range))
    return MotionField(np.asarray(grid), block_h, block_w)


def motion_compensate(reference, mv):
    H, W, _ = reference.shape
    mv.validate(H, W)
    bh, bw = mv.block_h, mv.block_w
    gh, gw = mv.grid.shape[:2]
    # gather index per pixel: block origin + in-block offset + displacement
    rows = (np.arange(gh)[:, None] * bh + mv.grid[..., 0])[:, :, None, None] + np.arange(bh)[:, None]
    cols = (np.arange(gw)[None, :] * bw + mv.grid[..., 1])[:, :, None, None] + np.arange(bw)[None, :]
    rows = np.broadcast_to(rows, (gh, gw, bh, bw)).transpose(0, 2, 1, 3).reshape(H, W)
    cols = np.broadcast_to(cols, (gh, gw, bh, bw)).transpose(0, 2, 1, 3).reshape(H, W)
    return reference[rows, cols]


def quantize_residual(residual, q):
    if q == 1:
        return residual.astype(np.int16)
    return np.clip(np.round(residual / q) * q, -255, 255).astype(np.int16)


def encode_gop(frames, block_h=4, block_w=4, search_range=4, q=1, backend="auto"):
    """Encode frames as one GOP, unpadded (``T_k - 1`` inter slots)."""
    frames = np.asarray(frames)
    if len(frames) == 0:
        raise InvalidInputError("cannot encode an empty GOP")
    H, W, _ = frames[0].shape
    n = len(frames) - 1
    motion = np.zeros((n, H // block_h, W // block_w, 2), np.int16)
    residuals = np.zeros((n, H, W, 3), np.int16)
    recon = frames[0]
    for t in range(1, len(frames)):
        mv = block_match(frames[t], recon, block_h, block_w, search_range, backend)
        pred = motion_compensate(recon, mv)
        res = quantize_residual(frames[t].astype(np.int16) - pred.astype(np.int16), q)
        motion[t - 1] = mv.grid
        residuals[t - 1] = res
        recon = np.clip(pred.astype(np.int16) + res, 0, 255).astype(np.uint8)
    return Gop(np.array(frames[0], np.uint8), motion, residuals, np.ones(n, bool), block_h, block_w)


def decode_gop(gop):
    mask = np.asarray(gop.pad_mask, bool)
    n = len(mask)
    if len(gop.motion) != n or len(gop.residuals) != n:
        raise InvalidInputError("pad_mask length does not match the inter slots")
    real = gop.real_count
    if not mask[:real].all():
        raise InvalidInputError("pad_mask must be True for a prefix of slots and False after")
    out = [gop.iframe]
    for t in range(1, real + 1):
        pred = motion_compensate(out[-1], gop.motion_field(t))
        out.append(np.clip(pred.astype(np.int16) + gop.residuals[t - 1], 0, 255).astype(np.uint8))
    return out


def compress_clip(clip, config=None):
    config = config or CodecConfig()
    config.validate()
    _, H, W, _ = clip.shape
    if H % config.block_h or W % config.block_w:
        raise InvalidInputError(f"{H}x{W} clip is not divisible by the block size")
    cuts = detect_scene_cuts(clip, config.scene_threshold)
    gops = []
    for start, length in segment_gops(len(clip), cuts, config.max_gop_len):
        gop = encode_gop(clip.frames[start:start + length], config.block_h, config.block_w,
                         config.search_range, config.q, config.backend)
        gops.append(gop.padded(config.T_g))
    header = StreamHeader(H, W, config.block_h, config.block_w, config.T_g, clip.fps,
                          config.scene_threshold, config.q)
    return GopStream(gops, header)


def decompress_stream(stream):
    frames = [f for gop in stream.gops for f in decode_gop(gop)]
    return VideoClip(np.stack(frames), stream.header.fps)
