"""Raster images, luminance, shadow fields and PNG/JPEG codecs.

Images are stored as ``(height, width, channels)`` uint8 arrays, which is
the row-major, top-left origin, interleaved layout used on disk.  Pixel
``(x, y)`` refers to column ``x`` and row ``y``.
"""

from __future__ import annotations

import io
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidInputError

__all__ = [
    "ImageBuffer",
    "ShadowParams",
    "luminance",
    "shadow_multiplier",
    "shadow_field",
    "apply_shadow",
    "quantize",
    "decode_image",
    "encode_image",
    "read_image",
    "write_image",
    "LUMA_WEIGHTS",
]

# ITU-R BT.601 weights for R, G, B.
LUMA_WEIGHTS = (0.2989, 0.587, 0.114)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An 8-bit raster with 1 or 3 interleaved channels."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise InvalidInputError(f"expected HxWx1 or HxWx3 raster, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidInputError(f"image must be at least 1x1, got {data.shape[1]}x{data.shape[0]}")
        if data.dtype != np.uint8:
            if np.issubdtype(data.dtype, np.floating) or np.any(data < 0) or np.any(data > 255):
                raise InvalidInputError("ImageBuffer data must be uint8; use quantize() for float rasters")
            data = data.astype(np.uint8)
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def float_view(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True)
class ShadowParams:
    center: tuple[float, float]
    cb: float
    eb: float

    def __post_init__(self):
        if not (0.0 <= self.eb <= 1.0 and 0.0 <= self.cb <= 1.0):
            raise InvalidInputError(f"brightness values must lie in [0, 1], got cb={self.cb}, eb={self.eb}")
        if self.eb > self.cb:
            raise InvalidInputError(f"edge brightness {self.eb} exceeds center brightness {self.cb}")


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half-up and clamp to [0, 255]."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def luminance(img) -> float:
    """Mean BT.601 luma of an image.

    Accepts an :class:`ImageBuffer` or a raw ``(H, W, C)`` array (float
    arrays are evaluated without quantization).  Single-channel images
    return their mean intensity.
    """
    arr = img.data if isinstance(img, ImageBuffer) else np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.size == 0:
        raise InvalidInputError("luminance of an image with zero pixels is undefined")
    arr = arr.astype(np.float64)
    if arr.shape[2] == 1:
        return float(arr.mean())
    if arr.shape[2] != 3:
        raise InvalidInputError(f"luminance needs 1 or 3 channels, got {arr.shape[2]}")
    r, g, b = LUMA_WEIGHTS
    luma = r * arr[:, :, 0] + g * arr[:, :, 1] + b * arr[:, :, 2]
    return float(luma.mean())


def shadow_multiplier(p, params: ShadowParams, d_max: float) -> float:
    """Brightness factor at point ``p``; ``eb`` at the shadow center, ``cb`` at distance ``d_max``."""
    if d_max <= 0:
        raise InvalidInputError(f"d_max must be positive, got {d_max}")
    d = math.hypot(p[0] - params.center[0], p[1] - params.center[1])
    t = min(d / d_max, 1.0)
    return params.eb + (params.cb - params.eb) * t


def shadow_field(width: int, height: int, params: ShadowParams, d_max: float | None = None) -> np.ndarray:
    """Per-pixel multiplier array of shape ``(height, width)``.

    ``d_max`` defaults to the image diagonal.
    """
    if d_max is None:
        d_max = math.hypot(width, height)
    if d_max <= 0:
        raise InvalidInputError(f"d_max must be positive, got {d_max}")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    d = np.hypot(xs - params.center[0], ys - params.center[1])
    t = np.minimum(d / d_max, 1.0)
    return params.eb + (params.cb - params.eb) * t


def apply_shadow(img: ImageBuffer, params: ShadowParams) -> ImageBuffer:
    """Scale every channel by the shadow multiplier of its pixel."""
    if params.cb == 1.0 and params.eb == 1.0:
        return img
    field = shadow_field(img.width, img.height, params)
    return ImageBuffer(quantize(img.float_view() * field[:, :, None]))


# -- codecs -----------------------------------------------------------------


def _check_png_chunks(data: bytes) -> None:
    pos = len(PNG_SIGNATURE)
    seen_end = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError("truncated PNG chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        end = pos + 12 + length
        if end > len(data):
            raise DecodeError(f"truncated PNG chunk {ctype!r}", pos)
        crc = struct.unpack(">I", data[end - 4:end])[0]
        if zlib.crc32(data[pos + 4:end - 4]) & 0xFFFFFFFF != crc:
            raise DecodeError(f"CRC mismatch in PNG chunk {ctype!r}", pos)
        pos = end
        if ctype == b"IEND":
            seen_end = True
            break
    if not seen_end:
        raise DecodeError("PNG stream ends without IEND chunk", pos)


def _check_jpeg_segments(data: bytes) -> None:
    if data[:2] != b"\xff\xd8":
        raise DecodeError("missing JPEG SOI marker", 0)
    pos = 2
    while pos < len(data):
        if data[pos] != 0xFF:
            raise DecodeError("expected JPEG marker", pos)
        if pos + 2 > len(data):
            raise DecodeError("truncated JPEG marker", pos)
        marker = data[pos + 1]
        if marker == 0xFF:
            pos += 1
            continue
        if marker in (0xD8, 0x01) or 0xD0 <= marker <= 0xD7:
            pos += 2
            continue
        if pos + 4 > len(data):
            raise DecodeError("truncated JPEG segment header", pos)
        seglen = struct.unpack(">H", data[pos + 2:pos + 4])[0]
        if pos + 2 + seglen > len(data):
            raise DecodeError("truncated JPEG segment", pos)
        if marker == 0xDA:
            # entropy-coded data follows; the stream must still close with EOI
            if data.rstrip(b"\x00")[-2:] != b"\xff\xd9":
                raise DecodeError("JPEG stream ends without EOI marker", len(data))
            return
        pos += 2 + seglen
    raise DecodeError("JPEG stream ends before scan data", pos)


def decode_image(data: bytes) -> ImageBuffer:
    """Decode PNG or JPEG bytes into an RGB or grayscale :class:`ImageBuffer`.

    Malformed streams raise :class:`DecodeError` carrying the byte offset of
    the first structural problem found.
    """
    data = bytes(data)
    if data.startswith(PNG_SIGNATURE):
        _check_png_chunks(data)
    elif data.startswith(b"\xff\xd8"):
        _check_jpeg_segments(data)
    else:
        raise DecodeError("unrecognized image signature", 0)
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode in ("L", "1", "I;16", "I"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}", len(data)) from exc
    return ImageBuffer(arr)


def encode_image(img: ImageBuffer, format: str = "png") -> bytes:
    fmt = format.lower()
    if fmt != "png":
        raise InvalidInputError(f"encoding supports PNG only, got {format!r}")
    arr = img.data[:, :, 0] if img.channels == 1 else img.data
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(arr)).save(buf, format="PNG")
    return buf.getvalue()


def read_image(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_image(path, img: ImageBuffer) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image(img))
