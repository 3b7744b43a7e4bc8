"""Bit-exact tensor serialization and superpixel label-map validation.

Wire format (little-endian throughout)::

    magic "DGMT" | version u8 (=1) | dtype u8 (0=f32, 1=i32) | ndim u8
    | ndim x u32 dims | row-major payload

Tensors are plain numpy arrays restricted to float32 / int32. f32 payloads
must be finite; NaN/Inf are rejected at load so downstream kernels can
assume finite inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    LengthMismatch,
    NegativeLabel,
    NonContiguousLabels,
    NonFiniteValue,
    ShapeMismatch,
    TooManyRegions,
    UnsupportedVersion,
)

MAGIC = b"DGMT"
VERSION = 1
FILE_EXTENSION = ".dgmt"

_DTYPE_CODE = {"f32": 0, "i32": 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<i4")}


def _wire_dtype(arr: np.ndarray) -> int:
    if arr.dtype == np.float32:
        return 0
    if arr.dtype == np.int32:
        return 1
    raise ShapeMismatch(f"unsupported tensor dtype {arr.dtype}; use float32 or int32")


def encode_tensor(t: np.ndarray) -> bytes:
    """Serialize a float32/int32 array to the binary wire format."""
    arr = np.ascontiguousarray(t)
    code = _wire_dtype(arr)
    if arr.ndim < 1 or arr.ndim > 255:
        raise ShapeMismatch(f"tensor rank {arr.ndim} outside [1, 255]")
    if any(d < 1 for d in arr.shape):
        raise ShapeMismatch(f"tensor dims must be positive, got {arr.shape}")
    if code == 0 and not np.isfinite(arr).all():
        raise NonFiniteValue("refusing to encode non-finite float tensor")
    header = MAGIC + bytes([VERSION, code, arr.ndim])
    dims = b"".join(struct.pack("<I", d) for d in arr.shape)
    payload = arr.astype(_CODE_DTYPE[code], copy=False).tobytes(order="C")
    return header + dims + payload


def decode_tensor(b: bytes) -> np.ndarray:
    """Inverse of encode_tensor; validates shape, length, and finiteness."""
    if len(b) < 4 or b[:4] != MAGIC:
        raise BadMagic("not a tensor payload (bad magic)")
    if len(b) < 7:
        raise LengthMismatch("truncated tensor header")
    version, code, ndim = b[4], b[5], b[6]
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported tensor format version {version}")
    if code not in _CODE_DTYPE:
        raise UnsupportedVersion(f"unknown dtype code {code}")
    dims_end = 7 + 4 * ndim
    if len(b) < dims_end:
        raise LengthMismatch("truncated dims block")
    shape = tuple(struct.unpack_from("<I", b, 7 + 4 * i)[0] for i in range(ndim))
    if any(d < 1 for d in shape):
        raise LengthMismatch(f"non-positive dim in {shape}")
    count = int(np.prod(shape, dtype=np.int64))
    expected = dims_end + 4 * count
    if len(b) != expected:
        raise LengthMismatch(f"payload length {len(b)} != expected {expected}")
    flat = np.frombuffer(b, dtype=_CODE_DTYPE[code], count=count, offset=dims_end)
    arr = flat.reshape(shape).astype(_CODE_DTYPE[code].newbyteorder("="))
    if code == 0 and not np.isfinite(arr).all():
        raise NonFiniteValue("tensor payload contains NaN or Inf")
    return arr


def encoded_length(shape: tuple[int, ...]) -> int:
    """Exact byte length of an encoded tensor: 7 + 4*ndim + 4*prod(dims)."""
    return 7 + 4 * len(shape) + 4 * int(np.prod(shape, dtype=np.int64))


def save_tensor(path, t: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


@dataclass(frozen=True)
class SuperpixelMap:
    """Validated H x W label map with per-region pixel bookkeeping.

    labels hold exactly {0..num_regions-1}; every region is nonempty.
    region_pixels[i] are flat indices into labels.ravel(); centroids are
    full-resolution (y, x) means used as the empty-region pooling fallback.
    """

    labels: np.ndarray
    num_regions: int
    region_pixels: tuple[np.ndarray, ...]
    centroids: np.ndarray

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


DEFAULT_MAX_REGIONS = 512


def validate_label_map(t: np.ndarray, max_regions: int = DEFAULT_MAX_REGIONS) -> SuperpixelMap:
    """Check label contiguity and build region pixel lists and centroids."""
    arr = np.asarray(t)
    if arr.ndim != 2:
        raise ShapeMismatch(f"label map must be 2-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ShapeMismatch(f"label map must be integer typed, got {arr.dtype}")
    labels = arr.astype(np.int32, copy=True)
    lo = int(labels.min())
    if lo < 0:
        raise NegativeLabel(f"negative label {lo}")
    hi = int(labels.max())
    n = hi + 1
    if n > max_regions:
        raise TooManyRegions(f"{n} regions exceeds maximum {max_regions}")
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise NonContiguousLabels(f"label {missing} has no pixels (labels must be 0..N-1)")

    order = np.argsort(flat, kind="stable")
    bounds = np.cumsum(counts)
    region_pixels = tuple(
        np.sort(order[start:stop])
        for start, stop in zip(np.concatenate(([0], bounds[:-1])), bounds)
    )
    h, w = labels.shape
    ys = np.bincount(flat, weights=np.repeat(np.arange(h, dtype=np.float64), w), minlength=n)
    xs = np.bincount(flat, weights=np.tile(np.arange(w, dtype=np.float64), h), minlength=n)
    centroids = np.stack([ys / counts, xs / counts], axis=1)
    labels.setflags(write=False)
    return SuperpixelMap(labels=labels, num_regions=n, region_pixels=region_pixels, centroids=centroids)
