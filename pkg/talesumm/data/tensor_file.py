"""
TSTN tensor container: magic, version, dtype, dims, little-endian float32 payload

    bytes 0-3    b"TSTN"
    bytes 4-7    version (u32 LE) = 1
    byte  8      dtype code (u8), 1 = float32
    byte  9      ndim (u8)
    next 4*ndim  dims (u32 LE each)
    rest         row-major float32 LE values
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np
import torch

from ..core.errors import TensorFormatError

logger = logging.getLogger(__name__)

MAGIC = b"TSTN"
VERSION = 1
DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<4sIBB")
_DIM = struct.Struct("<I")
_MAX_DIM = 0xFFFF_FFFF

TensorLike = Union[np.ndarray, torch.Tensor]


def encode_tensor(tensor: TensorLike) -> bytes:
    array = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
    if array.dtype != np.float32:
        raise TensorFormatError(f"only float32 tensors can be written, got {array.dtype}")
    if array.ndim > 255:
        raise TensorFormatError(f"{array.ndim} dimensions exceed the u8 ndim field")
    if any(d > _MAX_DIM for d in array.shape):
        raise TensorFormatError(f"dims {array.shape} overflow the u32 dim field")

    parts = [_HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, array.ndim)]
    parts += [_DIM.pack(d) for d in array.shape]
    parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensor(data: bytes, path: Union[str, Path, None] = None) -> torch.Tensor:
    where = str(path) if path is not None else None
    if len(data) < _HEADER.size:
        raise TensorFormatError(
            f"truncated header: {len(data)} bytes, need {_HEADER.size}", offset=len(data), path=where
        )
    magic, version, dtype, ndim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0, path=where)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", offset=4, path=where)
    if dtype != DTYPE_FLOAT32:
        raise TensorFormatError(f"unsupported dtype code {dtype}", offset=8, path=where)

    offset = _HEADER.size
    dims_end = offset + ndim * _DIM.size
    if len(data) < dims_end:
        raise TensorFormatError(
            f"truncated dims: {ndim} dims need {dims_end} bytes, file has {len(data)}",
            offset=len(data),
            path=where,
        )
    dims = [_DIM.unpack_from(data, offset + i * _DIM.size)[0] for i in range(ndim)]

    expected = 4 * int(np.prod(dims, dtype=np.int64)) if dims else 4
    actual = len(data) - dims_end
    if actual != expected:
        raise TensorFormatError(
            f"payload is {actual} bytes, dims {dims} need {expected}", offset=dims_end, path=where
        )
    if expected == 0:
        return torch.zeros(dims, dtype=torch.float32)
    array = np.frombuffer(data, dtype="<f4", offset=dims_end).reshape(dims)
    return torch.from_numpy(array.astype(np.float32, copy=True))


def write_tensor(path: Union[str, Path], tensor: TensorLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(tensor))


def read_tensor(path: Union[str, Path]) -> torch.Tensor:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise TensorFormatError(f"tensor file not found", offset=0, path=str(path)) from exc
    return decode_tensor(data, path)
