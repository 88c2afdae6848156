"""Image decoding and tensor preparation for the CT pipeline.

Uploads arrive as PNG or JPEG byte streams.  They are decoded to 8-bit
samples, bilinearly resized to 224x224, expanded to three channels when
grayscale, and scaled into [0, 1] as float32.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

TARGET_HEIGHT = 224
TARGET_WIDTH = 224
TARGET_CHANNELS = 3

_ACCEPTED_FORMATS = ("PNG", "JPEG")


class DecodeError(ValueError):
    """The payload is not a decodable PNG or JPEG image."""


@dataclass(frozen=True)
class RawImage:
    """Decoded image: 8-bit samples, row-major, channel-interleaved."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        if self.pixels.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"({self.height}, {self.width}, {self.channels})"
            )


def decode_image(data: bytes) -> RawImage:
    """Decode a PNG or JPEG byte stream into a RawImage.

    Grayscale sources keep a single channel; palette and RGB(A) sources
    come out as three channels with any alpha stripped.  Anything that
    is empty, truncated, or not PNG/JPEG raises DecodeError.
    """
    if not data:
        raise DecodeError("empty image payload")
    try:
        img = Image.open(io.BytesIO(data))
        fmt = img.format
        if fmt not in _ACCEPTED_FORMATS:
            raise DecodeError(f"unsupported image format {fmt!r}; expected PNG or JPEG")
        img.load()
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise DecodeError(f"could not decode image: {exc}") from exc

    arr = _to_uint8_array(img)
    h, w = arr.shape[0], arr.shape[1]
    return RawImage(width=w, height=h, channels=arr.shape[2], pixels=arr)


def _to_uint8_array(img: Image.Image) -> np.ndarray:
    """Flatten PIL modes down to uint8 with 1 or 3 channels."""
    mode = img.mode
    if mode == "1":
        img = img.convert("L")
    elif mode in ("LA", "PA"):
        img = img.convert("L")  # alpha carries nothing for CT scans
    elif mode in ("P", "RGBA", "CMYK", "YCbCr", "RGBX", "RGBa"):
        img = img.convert("RGB")
    elif mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        # 16-bit / float grayscale: rescale full range onto 8 bits
        wide = np.asarray(img, dtype=np.float64)
        arr = np.clip(np.round(wide / 257.0), 0, 255).astype(np.uint8)
        return arr[:, :, None]

    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] not in (1, 3):
        raise DecodeError(f"unsupported channel count {arr.shape[2]}")
    return arr


def preprocess(raw: RawImage) -> np.ndarray:
    """Produce the fixed 224x224x3 float32 tensor in [0, 1].

    Bilinear resize with half-pixel centers, grayscale replicated across
    three channels, samples scaled by 1/255.
    """
    arr = raw.pixels.astype(np.float32)
    resized = _resize_bilinear(arr, TARGET_HEIGHT, TARGET_WIDTH)
    if resized.shape[2] == 1:
        resized = np.repeat(resized, TARGET_CHANNELS, axis=2)
    out = resized / np.float32(255.0)
    np.clip(out, 0.0, 1.0, out=out)
    return np.ascontiguousarray(out, dtype=np.float32)


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample (H, W, C) -> (out_h, out_w, C), half-pixel centers."""
    in_h, in_w = img.shape[0], img.shape[1]
    if in_h == out_h and in_w == out_w:
        return img

    sy = in_h / out_h
    sx = in_w / out_w
    ys = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * sy - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * sx - 0.5, 0, in_w - 1)

    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]

    # lerp as a + (b-a)*t: exact on constant inputs
    tl = img[y0][:, x0]
    tr = img[y0][:, x1]
    bl = img[y1][:, x0]
    br = img[y1][:, x1]
    top = tl + (tr - tl) * wx
    bot = bl + (br - bl) * wx
    return top + (bot - top) * wy
