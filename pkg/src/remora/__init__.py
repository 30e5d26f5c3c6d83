"""Compressed-domain video representation at desk scale.

A block-matching codec turns clips into GOP streams, a small refiner maps
block motion to dense flow and motion tokens, and a two-level selective
scan compresses the GOP token sequences in linear time.
"""

from ._backend import NAME as backend
from .codec import (CodecConfig, Gop, GopStream, MotionField, VideoClip, block_match,
                    compress_clip, decode_gop, decompress_stream, detect_scene_cuts,
                    encode_gop, motion_compensate, segment_gops)
from .errors import (FormatError, InvalidConfigError, InvalidInputError,
                     InvariantViolationError, NumericError, RemoraError,
                     TrainingDivergenceError)
from .synthflow import DenseFlow, MotionSpec, endpoint_error, render_clip

__version__ = "0.1.0"
