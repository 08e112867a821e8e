"""Flat binary format for trained encoder parameters.

Layout (little endian):

    magic    4 bytes  b"CPLB"
    version  uint16
    D, K, h  uint32 each
    W1       h*D float64, row-major
    v        h   float64
    W2       D*D float64, row-major
    log_tau  1   float64

K is stored for provenance only; the encoder itself does not depend on it.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from src.core.errors import ModelFormatError
from src.encoder.model import EncoderParams

MAGIC = b"CPLB"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")
_FLOAT = np.dtype("<f8")


def encode_model(params: EncoderParams, num_slots: int) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, params.dim, num_slots, params.hidden_dim)
    return header + params.to_vector().astype(_FLOAT).tobytes()


def decode_model(blob: bytes) -> tuple[EncoderParams, int]:
    """Parses a model blob.

    Returns:
        tuple[EncoderParams, int]: The parameters and the stored slot count K.

    Raises:
        ModelFormatError: On a bad magic, unknown version or wrong payload size.
    """
    if len(blob) < _HEADER.size:
        raise ModelFormatError(f"model file is {len(blob)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, D, K, h = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    expected = h * D + h + D * D + 1
    payload = np.frombuffer(blob, dtype=_FLOAT, offset=_HEADER.size)
    if payload.size != expected or len(blob) != _HEADER.size + expected * _FLOAT.itemsize:
        raise ModelFormatError(f"payload holds {payload.size} floats, expected {expected} for D={D}, h={h}")
    return EncoderParams.from_vector(payload.astype(np.float64), D, h), int(K)


def save_model(path: str | Path, params: EncoderParams, num_slots: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(params, num_slots))
    return path


def load_model(path: str | Path) -> tuple[EncoderParams, int]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    return decode_model(path.read_bytes())
