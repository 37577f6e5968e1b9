"""DAFA feature archives.

Layout (all little-endian)::

    b"DAFA" | u32 version | u32 T | u32 F | T*F float32, row-major

One archive per utterance, named ``<utt_id>.dafa``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from dysaug.dsp import FeatureSequence
from dysaug.errors import ArchiveError

MAGIC = b"DAFA"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def encode_dafa(matrix: np.ndarray) -> bytes:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ArchiveError(f"DAFA stores 2-D matrices, got shape {matrix.shape}")
    rows, cols = matrix.shape
    body = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + body


def decode_dafa(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one matrix starting at ``offset``; returns (matrix, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise ArchiveError("truncated DAFA header")
    magic, version, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ArchiveError(f"unsupported DAFA version {version}")
    start = offset + _HEADER.size
    end = start + 4 * rows * cols
    if len(buf) < end:
        raise ArchiveError(f"truncated DAFA body: need {end - start} bytes, have {len(buf) - start}")
    matrix = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=start).reshape(rows, cols)
    return matrix.astype(np.float32), end


def write_dafa(path: str | Path, matrix) -> Path:
    if isinstance(matrix, FeatureSequence):
        matrix = matrix.frames
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_dafa(matrix))
    return path


def read_dafa(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    matrix, end = decode_dafa(buf)
    if end != len(buf):
        raise ArchiveError(f"{path}: {len(buf) - end} trailing bytes")
    return matrix


def read_features(path: str | Path, frame_shift_s: float = 0.01) -> FeatureSequence:
    return FeatureSequence.infer(read_dafa(path), frame_shift_s)


def archive_path(root: str | Path, utt_id: str) -> Path:
    return Path(root) / f"{utt_id}.dafa"
