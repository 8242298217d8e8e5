"""Quality and similarity measurement: PSNR, SSIM, the SSIM structural
component, and latent correlation.

SSIM-family metrics use 8x8 uniform sliding windows on the Rec. 601
luminance with the usual constants C1 = (0.01 * 255)^2 and
C2 = (0.03 * 255)^2; the structural component uses the standard
decomposition constant C2 / 2.  These choices are fixed here so golden
values are portable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codec import ImageBuffer

__all__ = [
    "MetricReport",
    "psnr",
    "ssim",
    "s_component",
    "latent_corr",
    "image_corr",
    "write_metrics_csv",
]

PSNR_CAP = 99.0
WINDOW = 8
C1 = (0.01 * 255.0) ** 2
C2 = (0.03 * 255.0) ** 2
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

CSV_HEADER = ["name", "psnr", "ssim", "s", "corr"]


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    s_component: float
    corr: float


def _check_pair(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical inputs."""
    _check_pair(a, b)
    mse = np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(255.0**2 / mse), PSNR_CAP)


def _luma(img: ImageBuffer) -> np.ndarray:
    return img.data.astype(np.float64) @ LUMA_WEIGHTS


def _window_moments(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, ...]:
    wx = sliding_window_view(x, (WINDOW, WINDOW))
    wy = sliding_window_view(y, (WINDOW, WINDOW))
    mx = wx.mean(axis=(-1, -2))
    my = wy.mean(axis=(-1, -2))
    vx = (wx**2).mean(axis=(-1, -2)) - mx**2
    vy = (wy**2).mean(axis=(-1, -2)) - my**2
    cxy = (wx * wy).mean(axis=(-1, -2)) - mx * my
    return mx, my, vx, vy, cxy


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean SSIM over all 8x8 luminance windows."""
    _check_pair(a, b)
    mx, my, vx, vy, cxy = _window_moments(_luma(a), _luma(b))
    num = (2.0 * mx * my + C1) * (2.0 * cxy + C2)
    den = (mx**2 + my**2 + C1) * (vx + vy + C2)
    return float(np.mean(num / den))


def s_component(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean structural component (2 sxy + C) / (sx^2 + sy^2 + C) over the
    same windows, with C = C2 / 2."""
    _check_pair(a, b)
    c = C2 / 2.0
    _, _, vx, vy, cxy = _window_moments(_luma(a), _luma(b))
    return float(np.mean((2.0 * cxy + c) / (vx + vy + c)))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / den) if den else 0.0


def latent_corr(z1: np.ndarray, z2: np.ndarray) -> float:
    """Pearson correlation of flattened latents."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"latent shapes differ: {z1.shape} vs {z2.shape}")
    return _pearson(z1.ravel(), z2.ravel())


def image_corr(a: ImageBuffer, b: ImageBuffer) -> float:
    _check_pair(a, b)
    return _pearson(
        a.data.astype(np.float64).ravel(), b.data.astype(np.float64).ravel()
    )


def report(a: ImageBuffer, b: ImageBuffer) -> MetricReport:
    return MetricReport(
        psnr=psnr(a, b), ssim=ssim(a, b), s_component=s_component(a, b), corr=image_corr(a, b)
    )


def write_metrics_csv(path, rows: Iterable[tuple[str, MetricReport]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for name, rep in rows:
            writer.writerow(
                [name, f"{rep.psnr:.4f}", f"{rep.ssim:.6f}", f"{rep.s_component:.6f}", f"{rep.corr:.6f}"]
            )
