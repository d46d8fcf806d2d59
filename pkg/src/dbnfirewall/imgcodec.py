"""Byteplot conversion: raw file bytes -> grayscale image -> DBN input vector.

Each byte becomes one pixel intensity in reading order. Row width follows the
MALIMG file-size buckets so images line up with that corpus.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, FirewallError, IoFailureError, ShapeMismatchError

KB = 1024

# (exclusive upper bound in bytes, row width)
WIDTH_TABLE = (
    (10 * KB, 32),
    (30 * KB, 64),
    (60 * KB, 128),
    (100 * KB, 256),
    (200 * KB, 384),
    (500 * KB, 512),
    (1000 * KB, 768),
)
MAX_WIDTH = 1024


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image; ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeMismatchError(f"pixels must be a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))


def width_for_size(n_bytes: int) -> int:
    for limit, width in WIDTH_TABLE:
        if n_bytes < limit:
            return width
    return MAX_WIDTH


def bytes_to_image(data: bytes) -> GrayImage:
    """Lay the bytes out row by row; the last row is zero-padded."""
    if len(data) == 0:
        raise EmptyInputError("cannot build a byteplot from an empty file")
    width = width_for_size(len(data))
    height = math.ceil(len(data) / width)
    buf = np.zeros(width * height, dtype=np.uint8)
    buf[: len(data)] = np.frombuffer(bytes(data), dtype=np.uint8)
    return GrayImage(buf.reshape(height, width))


def _overlap_matrix(src: int, dst: int) -> np.ndarray:
    # Integer overlap lengths in a grid scaled by src*dst: source pixel i spans
    # [i*dst, (i+1)*dst), target pixel x spans [x*src, (x+1)*src).
    edges_src = np.arange(src + 1, dtype=np.int64) * dst
    edges_dst = np.arange(dst + 1, dtype=np.int64) * src
    lo = np.maximum(edges_dst[:-1, None], edges_src[None, :-1])
    hi = np.minimum(edges_dst[1:, None], edges_src[None, 1:])
    return np.clip(hi - lo, 0, None)


def downscale(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Area-averaging box filter to ``target_w`` x ``target_h``.

    Source pixels are weighted by their overlap with each target cell. The sum
    is kept in exact integer arithmetic and rounded half-up, so the result does
    not depend on floating-point summation order.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (img.width, img.height) == (target_w, target_h):
        return GrayImage(img.pixels.copy())
    wx = _overlap_matrix(img.width, target_w)
    wy = _overlap_matrix(img.height, target_h)
    total = wy @ img.pixels.astype(np.int64) @ wx.T
    denom = img.width * img.height
    # round(total / denom) half-up == floor((2*total + denom) / (2*denom))
    out = (2 * total + denom) // (2 * denom)
    return GrayImage(out.astype(np.uint8))


def to_input_vector(img: GrayImage, shape: tuple[int, int] = (64, 64)) -> np.ndarray:
    """Normalise intensities to [0, 1]; ``shape`` is (width, height)."""
    if (img.width, img.height) != tuple(shape):
        raise ShapeMismatchError(
            f"image is {img.width}x{img.height}, expected {shape[0]}x{shape[1]}"
        )
    return img.flat().astype(np.float64) / 255.0


def side_for_inputs(n_inputs: int) -> int:
    """Square image side for a DBN input layer of ``n_inputs`` units."""
    side = math.isqrt(n_inputs)
    if side * side != n_inputs:
        raise ShapeMismatchError(f"input layer size {n_inputs} is not a square image")
    return side


def file_bytes_to_vector(data: bytes, side: int = 64) -> np.ndarray:
    """Full pipeline used by classification and evaluation."""
    img = downscale(bytes_to_image(data), side, side)
    return to_input_vector(img, (side, side))


def read_file_vector(path: str | os.PathLike, side: int = 64) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc
    return file_bytes_to_vector(data, side)


# PGM (P5) with maxval 255

def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def decode_pgm(blob: bytes) -> GrayImage:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FirewallError("truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise FirewallError("not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FirewallError(f"unsupported PGM maxval {maxval}")
    raster = blob[pos : pos + w * h]
    if len(raster) != w * h:
        raise FirewallError("truncated PGM raster")
    return GrayImage(np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy())
