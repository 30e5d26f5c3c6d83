"""Synthetic clips with analytically known dense optical flow.

Flow is forward flow in ``(dy, dx)`` order: the content at pixel ``p`` of
frame ``t-1`` moves to ``p + flow(p)`` in frame ``t``. Rotation and zoom act
about ``center`` (defaults to the image center) in ``(y, x)`` coordinates,
with rotation counter-clockwise in ``(x, y)`` image axes.
"""

from dataclasses import dataclass

import numpy as np

from .codec import VideoClip
from .errors import InvalidInputError

KINDS = ("translate", "rotate", "zoom")


@dataclass(frozen=True)
class DenseFlow:
    """``grid`` is ``(H, W, 2)`` float64 holding (dy, dx) per pixel."""

    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 3 or g.shape[-1] != 2:
            raise InvalidInputError(f"flow grid must be (H, W, 2), got {g.shape}")
        object.__setattr__(self, "grid", g)

    @property
    def shape(self):
        return self.grid.shape[:2]

    def check(self):
        H = self.grid.shape[0]
        if not np.isfinite(self.grid).all():
            raise InvalidInputError("flow has non-finite entries")
        if np.abs(self.grid).max(initial=0.0) > H:
            raise InvalidInputError("flow magnitude exceeds the frame height")
        return self


@dataclass(frozen=True)
class MotionSpec:
    kind: str = "translate"
    ty: float = 0.0
    tx: float = 0.0
    theta: float = 0.0
    scale: float = 1.0
    center: tuple | None = None

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if abs(self.ty) > 4 or abs(self.tx) > 4:
            raise InvalidInputError("translation components must satisfy |t| <= 4 px/frame")
        if abs(self.theta) > 0.2:
            raise InvalidInputError("rotation must satisfy |theta| <= 0.2 rad/frame")
        if not 0.8 <= self.scale <= 1.25:
            raise InvalidInputError("zoom scale must lie in [0.8, 1.25]")

    def _center(self, H, W):
        return (np.array(self.center, float) if self.center is not None
                else np.array([(H - 1) / 2.0, (W - 1) / 2.0]))

    def flow(self, H, W):
        """The per-frame forward flow, identical for every frame pair."""
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        if self.kind == "translate":
            g = np.empty((H, W, 2))
            g[..., 0] = self.ty
            g[..., 1] = self.tx
            return DenseFlow(g)
        cy, cx = self._center(H, W)
        ry, rx = yy - cy, xx - cx
        if self.kind == "rotate":
            c, s = np.cos(self.theta), np.sin(self.theta)
            ny, nx = s * rx + c * ry, c * rx - s * ry
        else:
            ny, nx = self.scale * ry, self.scale * rx
        return DenseFlow(np.stack([ny - ry, nx - rx], axis=-1))

    def source_coords(self, H, W):
        """Where each pixel of frame t samples frame t-1 (inverse map)."""
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        if self.kind == "translate":
            return yy - self.ty, xx - self.tx
        cy, cx = self._center(H, W)
        ry, rx = yy - cy, xx - cx
        if self.kind == "rotate":
            c, s = np.cos(self.theta), np.sin(self.theta)
            return cy + (c * ry - s * rx), cx + (c * rx + s * ry)
        return cy + ry / self.scale, cx + rx / self.scale


def texture(H, W, seed, sigma=3.0):
    """Band-limited RGB noise, histogram-equalized to span 0..255.

    Equalizing gives every channel uniform marginals, so two independent
    textures differ by about 1/3 of full scale on average (a clear cut).
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3, H, W))
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.fftfreq(W)[None, :]
    lowpass = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fy ** 2 + fx ** 2))
    field = np.real(np.fft.ifft2(np.fft.fft2(noise) * lowpass)).reshape(3, -1)
    ranks = np.argsort(np.argsort(field, axis=1), axis=1)
    levels = ranks * (255.0 / max(H * W - 1, 1))
    return np.round(levels.reshape(3, H, W).transpose(1, 2, 0)).astype(np.uint8)


def bilinear_sample(image, sy, sx):
    """Sample ``image`` (H, W, C) at real coordinates with edge clamping."""
    H, W = image.shape[:2]
    sy = np.clip(sy, 0.0, H - 1.0)
    sx = np.clip(sx, 0.0, W - 1.0)
    y0 = np.minimum(np.floor(sy).astype(int), H - 2) if H > 1 else np.zeros_like(sy, int)
    x0 = np.minimum(np.floor(sx).astype(int), W - 2) if W > 1 else np.zeros_like(sx, int)
    wy = (sy - y0)[..., None]
    wx = (sx - x0)[..., None]
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    img = image.astype(np.float64)
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def warp(frame, spec):
    """Advance ``frame`` by one step of ``spec``'s motion."""
    H, W = frame.shape[:2]
    sy, sx = spec.source_coords(H, W)
    return np.clip(np.round(bilinear_sample(frame, sy, sx)), 0, 255).astype(np.uint8)


def render_clip(spec, T=8, H=64, W=64, texture_seed=0, fps=16, first=None):
    """Return ``(VideoClip, flows)`` with ``T - 1`` per-step analytic flows.

    ``first`` overrides the seeded texture as frame 0.
    """
    spec.validate()
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    frames = [texture(H, W, texture_seed) if first is None else np.asarray(first, np.uint8)]
    for _ in range(T - 1):
        frames.append(warp(frames[-1], spec))
    flow = spec.flow(H, W)
    return VideoClip(np.stack(frames), fps), [flow] * (T - 1)


def _most_distinct(tex, prev):
    prev = prev.astype(np.int16)
    H, W = prev.shape[:2]
    best, best_diff = tex, -1
    for k in range(4 if H == W else 2):
        turned = np.rot90(tex, 2 * k if H != W else k)
        for cand in (turned, turned[:, ::-1]):
            for c in (cand, 255 - cand):
                diff = int(np.abs(c - prev).sum())
                if diff > best_diff:
                    best, best_diff = np.ascontiguousarray(c), diff
    return best


def render_cut_clip(parts, H=64, W=64, fps=16):
    """Concatenate independently textured segments, giving hard cuts.

    ``parts`` is a list of ``(MotionSpec, length, texture_seed)``.
    Each new segment starts from whichever flip, quarter turn or negative
    of its texture differs most from the preceding frame, so every cut is
    a clear one. Returns the clip and the frame indices where segments
    begin (cuts).
    """
    frames, cuts, pos = [], [], 0
    for spec, length, seed in parts:
        first = texture(H, W, seed)
        if pos:
            first = _most_distinct(first, frames[-1][-1])
            cuts.append(pos)
        clip, _ = render_clip(spec, length, H, W, fps=fps, first=first)
        frames.append(clip.frames)
        pos += length
    return VideoClip(np.concatenate(frames), fps), cuts


def compose_flows(flows):
    """Chain per-step flows into a single flow from the first frame."""
    total = np.zeros_like(flows[0].grid)
    H, W = flows[0].shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    for f in flows:
        step = bilinear_sample(f.grid, yy + total[..., 0], xx + total[..., 1])
        total = total + step
    return DenseFlow(total)


def endpoint_error(pred, truth):
    p = pred.grid if isinstance(pred, DenseFlow) else np.asarray(pred, float)
    t = truth.grid if isinstance(truth, DenseFlow) else np.asarray(truth, float)
    if p.shape != t.shape:
        raise InvalidInputError(f"flow shapes differ: {p.shape} vs {t.shape}")
    return float(np.sqrt(((p - t) ** 2).sum(axis=-1)).mean())
