"""Coverless multi-image steganography with seeded-key access control.

Secrets are inverted into diffusion latents, encrypted with per-user
seeded orthonormal transforms, fused into a single latent, and rendered
into one natural-looking carrier image; holders of a matching private
seed recover their designated secret from the carrier alone.
"""

from .codec import ImageBuffer, load_image, save_image
from .diffusion import Condition, DiffusionSchedule, ToyPredictor, make_schedule
from .keymech import (
    FlipKey,
    OrthoKey,
    build_flip,
    build_random_basis,
    flip_apply,
    ortho_apply,
    ortho_inverse,
)
from .metrics import MetricReport, latent_corr, psnr, s_component, ssim
from .pipeline import (
    HideTrace,
    RevealReport,
    StegoConfig,
    hide,
    hide_traced,
    refgen,
    reveal,
    split_factors,
)

__version__ = "0.1.0"

__all__ = [
    "ImageBuffer",
    "load_image",
    "save_image",
    "Condition",
    "DiffusionSchedule",
    "ToyPredictor",
    "make_schedule",
    "FlipKey",
    "OrthoKey",
    "build_flip",
    "build_random_basis",
    "flip_apply",
    "ortho_apply",
    "ortho_inverse",
    "MetricReport",
    "latent_corr",
    "psnr",
    "s_component",
    "ssim",
    "HideTrace",
    "RevealReport",
    "StegoConfig",
    "hide",
    "hide_traced",
    "refgen",
    "reveal",
    "split_factors",
    "__version__",
]
