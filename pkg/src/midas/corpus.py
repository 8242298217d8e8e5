"""Seeded synthetic test images.

Smooth multi-scale color fields with per-channel casts: enough flat area
for structure metrics to be meaningful, enough palette variation that
different images are genuinely distinct. Used by the test suite and the
experiment scripts; nothing downstream depends on real photographs.
"""

from __future__ import annotations

import numpy as np

from .codec import ImageBuffer, bilinear_resize

__all__ = ["synth_image", "synth_corpus"]


def synth_image(
    seed: int,
    size: int = 64,
    coarse: int = 6,
    low_range: tuple[float, float] = (24.0, 80.0),
    high_range: tuple[float, float] = (170.0, 232.0),
) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    img = np.empty((size, size, 3))
    for c in range(3):
        f = bilinear_resize(rng.standard_normal((coarse, coarse)), size, size)
        f -= f.min()
        f /= f.max() + 1e-12
        lo = rng.uniform(*low_range)
        hi = rng.uniform(*high_range)
        img[..., c] = f * (hi - lo) + lo
    return ImageBuffer(np.rint(img).astype(np.uint8))


def synth_corpus(count: int, base_seed: int = 0, size: int = 64) -> list[ImageBuffer]:
    return [synth_image(base_seed + i, size=size) for i in range(count)]
