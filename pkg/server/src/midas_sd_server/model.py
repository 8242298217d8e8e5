"""Latent-diffusion stack served over the protocol.

The stack is a VAE pair (image <-> 4-channel latent at 1/8 spatial
resolution), a small conditional U-Net style noise predictor, and a
deterministic prompt embedder.  Weights load from a checkpoint file;
``build_reference_checkpoint`` constructs an analytically initialized
stack (block-averaging encoder, bilinear decoder, linear noise predictor)
so the server is fully exercisable without downloading trained weights.
Trained checkpoints of the same layout drop in via ``save_checkpoint`` /
``load_model``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

LATENT_CHANNELS = 4
SPATIAL_FACTOR = 8
BASE_STEPS = 1000
BETA_START = 0.00085
BETA_END = 0.012
EMBED_DIM = 64
LUMA = (0.299, 0.587, 0.114)


def alpha_bar_base() -> torch.Tensor:
    sqrt_beta = torch.linspace(math.sqrt(BETA_START), math.sqrt(BETA_END), BASE_STEPS, dtype=torch.float64)
    return torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - sqrt_beta**2, dim=0)])


class VAE(nn.Module):
    """Strided-conv encoder and transpose-conv decoder, 8x spatial."""

    def __init__(self):
        super().__init__()
        self.encoder = nn.Conv2d(3, LATENT_CHANNELS, SPATIAL_FACTOR, stride=SPATIAL_FACTOR, bias=False)
        self.decoder = nn.ConvTranspose2d(
            LATENT_CHANNELS, 3, 2 * SPATIAL_FACTOR, stride=SPATIAL_FACTOR,
            padding=SPATIAL_FACTOR // 2, bias=False,
        )

    def encode(self, pixels: torch.Tensor) -> torch.Tensor:
        # pixels: (1, 3, H, W) in [0, 255]
        return self.encoder(pixels / 127.5 - 1.0)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return (self.decoder(latent) + 1.0) * 127.5


def _analytic_vae() -> VAE:
    vae = VAE()
    with torch.no_grad():
        w = torch.zeros_like(vae.encoder.weight)  # (4, 3, 8, 8)
        area = float(SPATIAL_FACTOR * SPATIAL_FACTOR)
        for c in range(3):
            w[c, c] = 1.0 / area
            w[3, c] = LUMA[c] / area
        vae.encoder.weight.copy_(w)

        ramp = torch.arange(2 * SPATIAL_FACTOR, dtype=torch.float32)
        tap = 1.0 - (ramp + 0.5 - SPATIAL_FACTOR).abs() / SPATIAL_FACTOR
        kernel = torch.outer(tap, tap)  # separable bilinear, partition of unity
        d = torch.zeros_like(vae.decoder.weight)  # (4, 3, 16, 16)
        for c in range(3):
            d[c, c] = kernel
        vae.decoder.weight.copy_(d)
    return vae


class ResBlock(nn.Module):
    def __init__(self, channels: int, embed_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.film = nn.Linear(embed_dim, 2 * channels)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        scale, shift = self.film(emb)[:, :, None, None].chunk(2, dim=1)
        h = F.silu(self.conv1(x)) * (1.0 + scale) + shift
        return x + self.conv2(h)


class NoisePredictor(nn.Module):
    """Conditional epsilon predictor with an analytic linear skip.

    Output is ``sqrt(1 - alpha_bar[t]) * z + residual(z, t, prompt)``.
    With zero-initialized residual output the stack predicts the exact
    optimal noise for a unit-variance Gaussian prior, which keeps the
    full pipeline well behaved before any training.
    """

    def __init__(self, width: int = 32):
        super().__init__()
        self.conv_in = nn.Conv2d(LATENT_CHANNELS, width, 3, padding=1)
        self.block1 = ResBlock(width, EMBED_DIM)
        self.block2 = ResBlock(width, EMBED_DIM)
        self.conv_out = nn.Conv2d(width, LATENT_CHANNELS, 3, padding=1)
        self.time_proj = nn.Linear(1, EMBED_DIM)
        self.register_buffer("alpha_bar", alpha_bar_base().to(torch.float32))

    def zero_residual_(self) -> None:
        with torch.no_grad():
            self.conv_out.weight.zero_()
            self.conv_out.bias.zero_()

    def forward(self, latent: torch.Tensor, timestep: int, prompt_emb: torch.Tensor) -> torch.Tensor:
        coef = torch.sqrt(1.0 - self.alpha_bar[timestep])
        t_feat = torch.tensor([[timestep / BASE_STEPS]], dtype=latent.dtype, device=latent.device)
        emb = self.time_proj(t_feat) + prompt_emb
        h = self.conv_in(latent)
        h = self.block1(h, emb)
        h = self.block2(h, emb)
        return coef * latent + self.conv_out(h)


def prompt_embedding(prompt: str) -> torch.Tensor:
    """Deterministic pseudo-random embedding; the empty prompt is zero."""
    if not prompt:
        return torch.zeros(1, EMBED_DIM)
    seed = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")
    vec = np.random.default_rng(seed).standard_normal(EMBED_DIM) / math.sqrt(EMBED_DIM)
    return torch.tensor(vec, dtype=torch.float32)[None]


def ref_embedding(ref_latent: np.ndarray) -> torch.Tensor:
    """Project a reference latent into the embedding space with a fixed
    seeded map (best-effort conditioning; experimental)."""
    pooled = torch.tensor(ref_latent, dtype=torch.float32).mean(dim=(1, 2))  # (C,)
    proj = torch.tensor(
        np.random.default_rng(2468).standard_normal((EMBED_DIM, LATENT_CHANNELS))
        / math.sqrt(LATENT_CHANNELS),
        dtype=torch.float32,
    )
    return (proj @ pooled)[None]


@dataclass
class LatentModel:
    vae: VAE
    predictor: NoisePredictor
    latent_scale: float = 1.0

    def latent_dims(self, height: int, width: int) -> tuple[int, int, int]:
        return (LATENT_CHANNELS, height // SPATIAL_FACTOR, width // SPATIAL_FACTOR)

    @torch.no_grad()
    def encode(self, pixels: np.ndarray) -> np.ndarray:
        x = torch.tensor(pixels, dtype=torch.float32)[None]
        z = self.vae.encode(x) * self.latent_scale
        return z[0].double().numpy()

    @torch.no_grad()
    def decode(self, latent: np.ndarray) -> np.ndarray:
        z = torch.tensor(latent, dtype=torch.float32)[None] / self.latent_scale
        x = self.vae.decode(z)
        return x[0].double().numpy()

    @torch.no_grad()
    def predict_noise(
        self,
        latent: np.ndarray,
        timestep: int,
        prompt: str,
        ref_latent: np.ndarray | None,
        ref_weight: float,
        guidance: float,
    ) -> np.ndarray:
        z = torch.tensor(latent, dtype=torch.float32)[None]
        emb = prompt_embedding(prompt)
        if ref_latent is not None and ref_weight > 0.0:
            emb = (1.0 - ref_weight) * emb + ref_weight * ref_embedding(ref_latent)
        eps = self.predictor(z, timestep, emb)
        if guidance != 1.0 and prompt:
            uncond = self.predictor(z, timestep, prompt_embedding(""))
            eps = uncond + guidance * (eps - uncond)
        return eps[0].double().numpy()


def build_reference_model() -> LatentModel:
    vae = _analytic_vae()
    predictor = NoisePredictor()
    predictor.zero_residual_()
    model = LatentModel(vae=vae, predictor=predictor)
    model.vae.eval()
    model.predictor.eval()
    return model


def save_checkpoint(model: LatentModel, path) -> None:
    torch.save(
        {
            "meta": {
                "latent_channels": LATENT_CHANNELS,
                "spatial_factor": SPATIAL_FACTOR,
                "latent_scale": model.latent_scale,
            },
            "vae": model.vae.state_dict(),
            "predictor": model.predictor.state_dict(),
        },
        path,
    )


def load_model(path) -> LatentModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    meta = blob["meta"]
    if meta["latent_channels"] != LATENT_CHANNELS or meta["spatial_factor"] != SPATIAL_FACTOR:
        raise ValueError(
            f"checkpoint geometry {meta['latent_channels']}ch/{meta['spatial_factor']}x "
            f"does not match the served {LATENT_CHANNELS}ch/{SPATIAL_FACTOR}x layout"
        )
    vae = VAE()
    vae.load_state_dict(blob["vae"])
    predictor = NoisePredictor()
    predictor.load_state_dict(blob["predictor"])
    model = LatentModel(vae=vae, predictor=predictor, latent_scale=float(meta["latent_scale"]))
    model.vae.eval()
    model.predictor.eval()
    return model
