"""Binary containers (all little-endian).

VCLP  clip:     "VCLP" u16 version, u32 H, u32 W, u32 T, u16 fps, T*H*W*3 u8
GOPS  stream:   "GOPS" u16 version, u32 H, u32 W, u16 b_h, u16 b_w, u16 T_g,
                u32 K, u16 fps, u16 q; per GOP: H*W*3 u8 I-frame, u16
                real_count (real inter slots), (T_g-1) motion fields of
                (H/b_h)*(W/b_w) i16 (dy, dx) pairs, (T_g-1) H*W*3 i16 residuals
FLOW  flows:    "FLOW" u32 H, u32 W, u32 T-1, then (T-1)*H*W f32 (dy, dx)
TNSR  tensor:   "TNSR" u8 rank, u32 dims[rank], f32 row-major payload.
      archive:  several TNSR records followed by "MNFT" u32 n, n bytes of
                UTF-8 JSON ({"names": [...], ...}).
"""

import io
import json
import struct

import numpy as np

from .codec import Gop, GopStream, StreamHeader, VideoClip
from .errors import FormatError
from .synthflow import DenseFlow

VCLP_VERSION = 1
GOPS_VERSION = 1
_VCLP_HEAD = struct.Struct("<4sHIIIH")
_GOPS_HEAD = struct.Struct("<4sHIIHHHIHH")
_FLOW_HEAD = struct.Struct("<4sIII")


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def _array(f, dtype, shape, what):
    dtype = np.dtype(dtype).newbyteorder("<")
    n = int(np.prod(shape)) * dtype.itemsize
    return np.frombuffer(_read_exact(f, n, what), dtype=dtype).reshape(shape)


def _open(path_or_file, mode):
    if hasattr(path_or_file, "read") or hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, mode), True


def _expect_eof(f, what):
    if f.read(1):
        raise FormatError(f"trailing bytes after {what}")


# VCLP

def write_clip(path, clip):
    T, H, W, _ = clip.shape
    f, own = _open(path, "wb")
    try:
        f.write(_VCLP_HEAD.pack(b"VCLP", VCLP_VERSION, H, W, T, clip.fps))
        f.write(np.ascontiguousarray(clip.frames, np.uint8).tobytes())
    finally:
        if own:
            f.close()


def read_clip(path):
    f, own = _open(path, "rb")
    try:
        magic, version, H, W, T, fps = _VCLP_HEAD.unpack(_read_exact(f, _VCLP_HEAD.size, "VCLP header"))
        if magic != b"VCLP":
            raise FormatError(f"bad magic {magic!r}, expected b'VCLP'")
        if version != VCLP_VERSION:
            raise FormatError(f"unsupported VCLP version {version}")
        frames = _array(f, np.uint8, (T, H, W, 3), "VCLP frames").copy()
        _expect_eof(f, "VCLP payload")
        return VideoClip(frames, fps)
    finally:
        if own:
            f.close()


# GOPS

def write_gops(path, stream):
    h = stream.header
    f, own = _open(path, "wb")
    try:
        f.write(_GOPS_HEAD.pack(b"GOPS", GOPS_VERSION, h.H, h.W, h.block_h, h.block_w,
                                h.T_g, stream.K, h.fps, h.q))
        for gop in stream.gops:
            if gop.slots != h.T_g - 1:
                raise FormatError(f"GOP has {gop.slots} slots, header says {h.T_g - 1}")
            f.write(np.ascontiguousarray(gop.iframe, np.uint8).tobytes())
            f.write(struct.pack("<H", gop.real_count))
            f.write(np.ascontiguousarray(gop.motion, "<i2").tobytes())
            f.write(np.ascontiguousarray(gop.residuals, "<i2").tobytes())
    finally:
        if own:
            f.close()


def read_gops(path):
    f, own = _open(path, "rb")
    try:
        head = _GOPS_HEAD.unpack(_read_exact(f, _GOPS_HEAD.size, "GOPS header"))
        magic, version, H, W, bh, bw, T_g, K, fps, q = head
        if magic != b"GOPS":
            raise FormatError(f"bad magic {magic!r}, expected b'GOPS'")
        if version != GOPS_VERSION:
            raise FormatError(f"unsupported GOPS version {version}")
        if bh == 0 or bw == 0 or H % bh or W % bw or T_g == 0:
            raise FormatError("GOPS header has inconsistent block geometry")
        slots = T_g - 1
        gops = []
        for k in range(K):
            iframe = _array(f, np.uint8, (H, W, 3), f"GOP {k} I-frame").copy()
            (real,) = struct.unpack("<H", _read_exact(f, 2, f"GOP {k} real_count"))
            if real > slots:
                raise FormatError(f"GOP {k}: real_count {real} exceeds {slots} slots")
            motion = _array(f, np.int16, (slots, H // bh, W // bw, 2), f"GOP {k} motion").astype(np.int16)
            residuals = _array(f, np.int16, (slots, H, W, 3), f"GOP {k} residuals").astype(np.int16)
            mask = np.arange(slots) < real
            gops.append(Gop(iframe, motion, residuals, mask, bh, bw))
        _expect_eof(f, "GOPS payload")
        return GopStream(gops, StreamHeader(H, W, bh, bw, T_g, fps, None, q))
    finally:
        if own:
            f.close()


# FLOW

def write_flows(path, flows):
    H, W = flows[0].shape if flows else (0, 0)
    f, own = _open(path, "wb")
    try:
        f.write(_FLOW_HEAD.pack(b"FLOW", H, W, len(flows)))
        for fl in flows:
            f.write(np.ascontiguousarray(fl.grid, "<f4").tobytes())
    finally:
        if own:
            f.close()


def read_flows(path):
    f, own = _open(path, "rb")
    try:
        magic, H, W, n = _FLOW_HEAD.unpack(_read_exact(f, _FLOW_HEAD.size, "FLOW header"))
        if magic != b"FLOW":
            raise FormatError(f"bad magic {magic!r}, expected b'FLOW'")
        flows = [DenseFlow(_array(f, np.float32, (H, W, 2), f"flow {i}").astype(np.float64))
                 for i in range(n)]
        _expect_eof(f, "FLOW payload")
        return flows
    finally:
        if own:
            f.close()


# TNSR

def _write_tensor(f, arr):
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    f.write(b"TNSR" + struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, "<f4").tobytes())


def _read_tensor_body(f):
    (rank,) = struct.unpack("<B", _read_exact(f, 1, "TNSR rank"))
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "TNSR dims"))
    return _array(f, np.float32, dims, "TNSR payload").copy()


def write_tensor(path, arr):
    f, own = _open(path, "wb")
    try:
        _write_tensor(f, arr)
    finally:
        if own:
            f.close()


def read_tensor(path):
    tensors, manifest = read_archive(path)
    if len(tensors) != 1 or manifest is not None:
        raise FormatError("expected a single-tensor TNSR file")
    return next(iter(tensors.values()))


def write_archive(path, tensors, manifest=None):
    """Named tensors in order plus a JSON manifest (``names`` is filled in)."""
    manifest = dict(manifest or {})
    manifest["names"] = list(tensors)
    f, own = _open(path, "wb")
    try:
        for arr in tensors.values():
            _write_tensor(f, arr)
        blob = json.dumps(manifest, sort_keys=True).encode()
        f.write(b"MNFT" + struct.pack("<I", len(blob)) + blob)
    finally:
        if own:
            f.close()


def read_archive(path):
    """Return ``(dict of name -> float32 array, manifest or None)``."""
    f, own = _open(path, "rb")
    try:
        arrays, manifest = [], None
        while True:
            magic = f.read(4)
            if not magic:
                break
            if magic == b"TNSR":
                if manifest is not None:
                    raise FormatError("tensor record after manifest")
                arrays.append(_read_tensor_body(f))
            elif magic == b"MNFT":
                (n,) = struct.unpack("<I", _read_exact(f, 4, "manifest length"))
                manifest = json.loads(_read_exact(f, n, "manifest").decode())
            else:
                raise FormatError(f"bad magic {magic!r}, expected b'TNSR'")
        if not arrays:
            raise FormatError("no tensors in TNSR file")
        if manifest is None:
            return {str(i): a for i, a in enumerate(arrays)}, None
        names = manifest.get("names", [])
        if len(names) != len(arrays):
            raise FormatError(f"manifest names {len(names)} tensors, file holds {len(arrays)}")
        return dict(zip(names, arrays)), manifest
    finally:
        if own:
            f.close()


def to_bytes(writer, obj):
    buf = io.BytesIO()
    writer(buf, obj)
    return buf.getvalue()
