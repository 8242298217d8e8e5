"""Reusable study drivers: the key-mechanism structure sweep, the
access-control trial battery, and the hyperparameter sweep behind the CLI
``sweep`` command."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .codec import ImageBuffer, downsample
from .corpus import synth_image
from .diffusion import Condition, ddim_denoise, ddim_invert, make_schedule
from .keymech import build_flip, build_random_basis, flip_apply, ortho_apply
from .metrics import psnr, s_component
from .pipeline import LocalToyBackend, StegoConfig, hide_traced, reveal

__all__ = [
    "structure_sweep",
    "AccessControlResult",
    "access_control_study",
    "sweep_rows",
]


def _encrypt_channels(z: np.ndarray, count: int, method: str, seed: int) -> np.ndarray:
    """Scramble the first ``count`` latent channels at full strength."""
    out = np.array(z, copy=True)
    rng = np.random.default_rng(seed)
    dim = z.shape[1] * z.shape[2]
    for c in range(count):
        chan_seed = int(rng.integers(2**63))
        flat = out[c].ravel()
        if method == "random_basis":
            key = build_random_basis(dim, 1.0, chan_seed)
            out[c] = ortho_apply(key, flat).reshape(out[c].shape)
        elif method == "noise_flip":
            out[c] = flip_apply(build_flip(dim, chan_seed), flat).reshape(out[c].shape)
        else:
            raise ValueError(f"unknown method {method!r}")
    return out


def structure_sweep(
    corpus_size: int = 8,
    corpus_seed: int = 3000,
    steps: int = 50,
    xi: float = 0.4,
    image_size: int = 64,
) -> dict[str, list[float]]:
    """Residual-structure study: invert each image, scramble K of the four
    latent channels at full strength, regenerate, and measure the mean
    structural component against the original, for K = 0..4.

    Returns per-method lists indexed by K."""
    sched = make_schedule(steps, xi)
    backend = LocalToyBackend()
    pred = backend.predictor(sched)
    cond = Condition("")
    k = sched.active_steps
    images = [synth_image(corpus_seed + i, size=image_size) for i in range(corpus_size)]
    inverted = [
        ddim_invert(backend.encode(img), 0, k, pred, cond, sched) for img in images
    ]
    table: dict[str, list[float]] = {}
    for method in ("random_basis", "noise_flip"):
        rows = []
        for count in range(5):
            vals = []
            for i, (img, z_k) in enumerate(zip(images, inverted)):
                scrambled = _encrypt_channels(z_k, count, method, seed=500 + i)
                out = backend.decode(ddim_denoise(scrambled, k, 0, pred, cond, sched))
                vals.append(s_component(img, out))
            rows.append(float(np.mean(vals)))
        table[method] = rows
    return table


@dataclass(frozen=True)
class AccessControlResult:
    correct_psnr: float
    wrong_psnr: float
    correct_corr: float
    wrong_corr: float

    @property
    def psnr_gap(self) -> float:
        return self.correct_psnr - self.wrong_psnr

    @property
    def corr_gap(self) -> float:
        return self.correct_corr - self.wrong_corr


def _trial_secrets(trial: int, count: int, size: int) -> list[ImageBuffer]:
    return [synth_image(1000 + 10 * trial + j, size=size) for j in range(count)]


def _trial_seeds(trial: int, count: int) -> list[int]:
    return [20_000 + 10_000 * j + 10 * trial for j in range(count)]


def access_control_study(
    trials: int = 20,
    prompt: str = "a quiet mountain lake at dawn",
    pub_seed: int = 777,
    image_size: int = 64,
    backend_obj=None,
    **config_overrides,
) -> AccessControlResult:
    """Hide two secrets per trial, reveal with every user's key, and
    aggregate correct-key versus wrong-key reconstruction quality."""
    ps_c, ps_w, cor_c, cor_w = [], [], [], []
    for trial in range(trials):
        secrets = _trial_secrets(trial, 2, image_size)
        seeds = _trial_seeds(trial, 2)
        cfg = StegoConfig.with_defaults(seeds, pub_seed, prompt, **config_overrides)
        stego, trace = hide_traced(secrets, cfg, backend_obj)
        for user in (1, 2):
            report = reveal(stego, user, seeds[user - 1], cfg, backend_obj)
            corrs = report.diagnostics_against(trace.secret_latents)
            for j in range(2):
                value = psnr(report.images[j], secrets[j])
                if j + 1 == user:
                    ps_c.append(value)
                    cor_c.append(corrs[j])
                else:
                    ps_w.append(value)
                    cor_w.append(corrs[j])
    return AccessControlResult(
        correct_psnr=float(np.mean(ps_c)),
        wrong_psnr=float(np.mean(ps_w)),
        correct_corr=float(np.mean(cor_c)),
        wrong_corr=float(np.mean(cor_w)),
    )


def sweep_rows(
    param: str,
    values,
    secrets,
    cfg: StegoConfig,
    backend_obj=None,
) -> list[dict]:
    """Rerun hide/reveal across one parameter axis.

    Each row reports carrier diversity (PSNR between every secret and its
    grid region in the carrier, lower is more diverse) and correct/wrong
    reconstruction PSNR."""
    if param not in ("alpha", "gamma_priv", "gamma_fuse"):
        raise ValueError(f"unsupported sweep parameter {param!r}")
    rows = []
    for value in values:
        cfg_v = replace(cfg, **{param: float(value)})
        cfg_v.validate()
        stego, _ = hide_traced(secrets, cfg_v, backend_obj)
        region_h = stego.height // cfg_v.n1
        region_w = stego.width // cfg_v.n2
        div = []
        for j, img in enumerate(secrets):
            r, q = divmod(j, cfg_v.n2)
            region = ImageBuffer(
                stego.data[r * region_h : (r + 1) * region_h, q * region_w : (q + 1) * region_w]
            )
            div.append(psnr(region, downsample(img, cfg_v.n1, cfg_v.n2)))
        correct, wrong = [], []
        for user in range(1, cfg_v.n_secrets + 1):
            report = reveal(stego, user, cfg_v.priv_seeds[user - 1], cfg_v, backend_obj)
            for j in range(cfg_v.n_secrets):
                (correct if j + 1 == user else wrong).append(psnr(report.images[j], secrets[j]))
        rows.append(
            {
                "param": param,
                "value": float(value),
                "stego_region_psnr": float(np.mean(div)),
                "correct_psnr": float(np.mean(correct)),
                "wrong_psnr": float(np.mean(wrong)) if wrong else float("nan"),
            }
        )
    return rows
