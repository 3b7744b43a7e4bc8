"""Minimal binary PPM/PGM support for the demo feature extractor and exports.

Only the binary variants (P6 / P5) with maxval 255 are handled; images load
as float arrays in [0, 1], channel-first.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def _read_header(data: bytes, magic: bytes):
    # header tokens may be separated by arbitrary whitespace and '#' comments
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ShapeMismatch("truncated netpbm header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != magic:
        raise ShapeMismatch(f"expected {magic!r} header, got {tokens[0]!r}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ShapeMismatch(f"only maxval 255 supported, got {maxval}")
    return width, height, pos


def read_ppm(path) -> np.ndarray:
    """Load a binary P6 image as float64 (3, H, W) in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, offset = _read_header(data, b"P6")
    n = width * height * 3
    raw = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
    img = raw.reshape(height, width, 3).astype(np.float64) / 255.0
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) array with values in [0, 1] as binary P6."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatch(f"expected (3, H, W) image, got {image.shape}")
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    raw = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    h, w = raw.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(raw.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary P5."""
    arr = np.asarray(gray)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected (H, W) grayscale, got {arr.shape}")
    arr = arr.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Load a binary P5 image as uint8 (H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, offset = _read_header(data, b"P5")
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return raw.reshape(height, width).copy()
