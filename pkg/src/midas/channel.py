"""Transmission degradations: seeded Gaussian pixel noise and a
self-contained JPEG-style DCT-quantization distortion.

The JPEG path does blockwise 8x8 DCT per channel in YCbCr with the
standard Annex-K tables scaled by the quality factor, then dequantizes
and inverts.  No entropy coding, chroma subsampling, or file emission:
the point is a bit-reproducible degradation, not interchange.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import ImageBuffer

__all__ = ["Degradation", "apply_gaussian", "apply_jpeg", "apply_degradation", "parse_degradation"]

LUMA_QUANT = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_QUANT = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)
    mat = math.sqrt(2.0 / n) * np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * n))
    mat[0] /= math.sqrt(2.0)
    return mat


DCT8 = _dct_matrix(8)


@dataclass(frozen=True)
class Degradation:
    kind: str = "none"  # none | gaussian | jpeg
    sigma: float = 0.0
    quality: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "gaussian", "jpeg"):
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 1 <= self.quality <= 100:
            raise ValueError(f"quality must be in [1, 100], got {self.quality}")


def apply_gaussian(img: ImageBuffer, sigma: float, seed: int) -> ImageBuffer:
    """Add seeded i.i.d. N(0, sigma^2) per sample, clamp and round."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed)
    noisy = img.data.astype(np.float64) + rng.normal(0.0, sigma, img.data.shape)
    return ImageBuffer(np.rint(np.clip(noisy, 0.0, 255.0)).astype(np.uint8))


def _quality_scale(quality: int) -> float:
    return 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality


def _scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    scaled = np.floor((base * _quality_scale(quality) + 50.0) / 100.0)
    return np.clip(scaled, 1.0, 255.0)


def _rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _blockwise_quantize(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coeffs = np.einsum("ij,bcjk,lk->bcil", DCT8, blocks, DCT8)
    coeffs = np.rint(coeffs / table) * table
    out = np.einsum("ji,bcjk,kl->bcil", DCT8, coeffs, DCT8) + 128.0
    return out.transpose(0, 2, 1, 3).reshape(h, w)


def apply_jpeg(img: ImageBuffer, quality: int) -> ImageBuffer:
    """Baseline JPEG-style degradation at the given quality factor."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    h, w = img.height, img.width
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    rgb = img.data.astype(np.float64)
    if pad_h or pad_w:
        rgb = np.pad(rgb, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    ycc = _rgb_to_ycbcr(rgb)
    tables = [_scaled_table(LUMA_QUANT, quality)] + [_scaled_table(CHROMA_QUANT, quality)] * 2
    planes = [_blockwise_quantize(ycc[..., c], tables[c]) for c in range(3)]
    out = _ycbcr_to_rgb(np.stack(planes, axis=-1))[:h, :w]
    return ImageBuffer(np.rint(np.clip(out, 0.0, 255.0)).astype(np.uint8))


def apply_degradation(img: ImageBuffer, deg: Degradation) -> ImageBuffer:
    if deg.kind == "none":
        return img
    if deg.kind == "gaussian":
        return apply_gaussian(img, deg.sigma, deg.seed)
    return apply_jpeg(img, deg.quality)


def parse_degradation(spec: str, seed: int = 0) -> Degradation:
    """Parse ``gaussian:SIGMA`` or ``jpeg:QUALITY``."""
    kind, _, arg = spec.partition(":")
    if kind == "gaussian":
        return Degradation(kind="gaussian", sigma=float(arg), seed=seed)
    if kind == "jpeg":
        return Degradation(kind="jpeg", quality=int(arg))
    if kind == "none":
        return Degradation()
    raise ValueError(f"unknown degradation {spec!r}")
