"""Image <-> latent conversion and spatial resampling.

Images are 8-bit RGB (:class:`ImageBuffer`); latents are plain float
``numpy`` arrays of shape ``(C, H, W)``.  The toy codec maps an image to a
4-channel latent (RGB rescaled to [-1, 1] plus luminance) at a quarter of
the spatial resolution via area pooling; its decoder nearest-upsamples the
RGB channels and drops the luminance channel.  The channel count mirrors
the latent layout of the full-scale backends so dimension bookkeeping is
identical everywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

__all__ = [
    "ImageBuffer",
    "load_image",
    "save_image",
    "bilinear_resize",
    "downsample",
    "upsample",
    "toy_encode",
    "toy_decode",
    "save_latent",
    "load_latent",
    "latent_to_bytes",
    "latent_from_bytes",
]

TOY_POOL = 4
TOY_CHANNELS = 4
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

LATENT_MAGIC = b"MLAT"
LATENT_VERSION = 1
_LATENT_HEADER = struct.Struct("<4sHIII")


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit RGB image, row-major ``(height, width, 3)`` samples."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3 or d.dtype != np.uint8:
            raise ValueError(f"image data must be (h, w, 3) uint8, got {d.shape} {d.dtype}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3


def load_image(path) -> ImageBuffer:
    with Image.open(path) as im:
        return ImageBuffer(np.asarray(im.convert("RGB"), dtype=np.uint8))


def save_image(img: ImageBuffer, path) -> None:
    Image.fromarray(img.data, mode="RGB").save(path, format="PNG")


def _quantize(arr: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(arr, 0.0, 255.0)).astype(np.uint8)


def bilinear_resize(field: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of a 2-D float field, half-pixel centers with
    edge clamping."""
    h, w = field.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = (ys - y0f)[:, None]
    fx = (xs - x0f)[None, :]
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    top = field[np.ix_(y0, x0)] * (1.0 - fx) + field[np.ix_(y0, x1)] * fx
    bot = field[np.ix_(y1, x0)] * (1.0 - fx) + field[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy


def downsample(img: ImageBuffer, n1: int, n2: int) -> ImageBuffer:
    """Area-average downsampling by ``n1`` in height and ``n2`` in width."""
    h, w = img.height, img.width
    if h % n1 or w % n2:
        raise ValueError(f"image {h}x{w} not divisible by factors ({n1}, {n2})")
    x = img.data.astype(np.float64)
    x = x.reshape(h // n1, n1, w // n2, n2, 3).mean(axis=(1, 3))
    return ImageBuffer(_quantize(x))


def upsample(img: ImageBuffer, n1: int, n2: int) -> ImageBuffer:
    """Bilinear upsampling by ``(n1, n2)``."""
    h, w = img.height, img.width
    out = np.stack(
        [bilinear_resize(img.data[..., k].astype(np.float64), h * n1, w * n2) for k in range(3)],
        axis=-1,
    )
    return ImageBuffer(_quantize(out))


def toy_encode(img: ImageBuffer) -> np.ndarray:
    """Image -> ``(4, h/4, w/4)`` latent: rescale to [-1, 1], append the
    luminance channel, area-pool 4x4."""
    h, w = img.height, img.width
    if h % TOY_POOL or w % TOY_POOL:
        raise ValueError(f"image {h}x{w} not divisible by {TOY_POOL}")
    x = img.data.astype(np.float64) / 127.5 - 1.0
    luma = x @ LUMA_WEIGHTS
    ch = np.concatenate([np.moveaxis(x, -1, 0), luma[None]], axis=0)
    return ch.reshape(TOY_CHANNELS, h // TOY_POOL, TOY_POOL, w // TOY_POOL, TOY_POOL).mean(
        axis=(2, 4)
    )


def toy_decode(z: np.ndarray) -> ImageBuffer:
    """Latent -> image: nearest reconstruction of the RGB channels, the
    fourth channel is dropped."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or z.shape[0] != TOY_CHANNELS:
        raise ValueError(f"latent must be ({TOY_CHANNELS}, H, W), got {z.shape}")
    rgb = np.repeat(np.repeat(z[:3], TOY_POOL, axis=1), TOY_POOL, axis=2)
    return ImageBuffer(_quantize((np.moveaxis(rgb, 0, -1) + 1.0) * 127.5))


def latent_to_bytes(z: np.ndarray) -> bytes:
    z = np.asarray(z)
    if z.ndim != 3:
        raise ValueError(f"latent must be 3-D, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent contains non-finite values")
    c, h, w = z.shape
    header = _LATENT_HEADER.pack(LATENT_MAGIC, LATENT_VERSION, c, h, w)
    return header + np.ascontiguousarray(z, dtype="<f4").tobytes()


def latent_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _LATENT_HEADER.size:
        raise ValueError("latent record too short")
    magic, version, c, h, w = _LATENT_HEADER.unpack(blob[: _LATENT_HEADER.size])
    if magic != LATENT_MAGIC:
        raise ValueError(f"bad latent magic {magic!r}")
    if version != LATENT_VERSION:
        raise ValueError(f"unsupported latent version {version}")
    body = blob[_LATENT_HEADER.size :]
    if len(body) != 4 * c * h * w:
        raise ValueError(f"latent payload is {len(body)} bytes, expected {4 * c * h * w}")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float64)


def save_latent(z: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(latent_to_bytes(z))


def load_latent(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return latent_from_bytes(fh.read())
