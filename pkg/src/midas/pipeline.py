"""Hiding, reconstruction, and reference generation.

The hiding stage inverts each downsampled secret to a partial-run noisy
latent under the null-text condition, encrypts it with the holder's
seeded orthonormal key, pushes it a few smoothing steps further, tiles
the per-user segments into the base latent grid, blends the keyed mix
with the reference latent, and denoises the result into the transmitted
image.  Reconstruction runs the exact inverse chain; only the segment
whose key matches decrypts to a meaningful latent, which implements the
per-user access control.

All randomness flows from config seeds; identical inputs give identical
bytes end to end.  Per-segment work runs sequentially, which keeps runs
reproducible no matter what concurrency the backend declares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend as wire
from .codec import ImageBuffer, downsample, toy_decode, toy_encode, upsample
from .diffusion import (
    Condition,
    DiffusionSchedule,
    ToyPredictor,
    base_timestep,
    ddim_denoise,
    ddim_invert,
    edict_denoise,
    edict_invert,
    make_schedule,
)
from .keymech import OrthoKey, build_random_basis, ortho_apply, ortho_inverse
from .metrics import latent_corr

__all__ = [
    "StegoConfig",
    "HideTrace",
    "RevealReport",
    "split_factors",
    "fuse_latents",
    "decompose_latents",
    "concat_segments",
    "split_segments",
    "LocalToyBackend",
    "RemoteBackend",
    "resolve_backend",
    "refgen",
    "hide",
    "hide_traced",
    "reveal",
]

DEFAULT_REF_WEIGHT = 0.15


def split_factors(n: int) -> tuple[int, int]:
    """Grid factors for ``n`` segments: the height factor is the smallest
    power of two whose square covers ``n``."""
    if n < 1:
        raise ValueError(f"secret count must be >= 1, got {n}")
    n1 = 1
    while n1 * n1 < n:
        n1 *= 2
    if n % n1:
        raise ValueError(f"cannot split {n} secrets into a {n1}-row grid")
    return n1, n // n1


@dataclass(frozen=True)
class StegoConfig:
    """Pipeline parameters; defaults are the production settings for
    multi-secret hiding (see :meth:`with_defaults` for the single-secret
    variant)."""

    priv_seeds: tuple[int, ...]
    pub_seed: int
    prompt: str
    n_secrets: int = 2
    n1: int = 2
    n2: int = 1
    steps: int = 50
    xi_priv: float = 0.4
    xi_pub: float = 0.7
    alpha: float = 0.95
    gamma_priv: float = 0.4
    gamma_fuse: float = 0.5
    edict_p: float = 0.93
    smoothing_steps: int = 5
    extra_denoise_steps: int = 0
    ref_weight: float = DEFAULT_REF_WEIGHT
    backend: str = "toy"
    joint_denoise: bool = True
    use_edict: bool = True

    @classmethod
    def with_defaults(
        cls, priv_seeds: tuple[int, ...] | list[int], pub_seed: int, prompt: str, **overrides
    ) -> "StegoConfig":
        """Build a config for ``len(priv_seeds)`` secrets, applying the
        count-dependent defaults (single-secret hiding disables fusion
        mixing and smoothing and raises the private strength)."""
        n = len(priv_seeds)
        n1, n2 = split_factors(n)
        fields = dict(
            priv_seeds=tuple(int(s) for s in priv_seeds),
            pub_seed=int(pub_seed),
            prompt=prompt,
            n_secrets=n,
            n1=n1,
            n2=n2,
        )
        if n == 1:
            fields.update(gamma_priv=0.5, gamma_fuse=0.0, smoothing_steps=0)
        fields.update(overrides)
        cfg = cls(**fields)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.n1 * self.n2 != self.n_secrets:
            raise ValueError(f"n1*n2 = {self.n1 * self.n2} != n_secrets = {self.n_secrets}")
        if len(self.priv_seeds) != self.n_secrets:
            raise ValueError(
                f"{len(self.priv_seeds)} private seeds for {self.n_secrets} secrets"
            )
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        for name in ("gamma_priv", "gamma_fuse"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("xi_priv", "xi_pub"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if not 0.5 < self.edict_p <= 1.0:
            raise ValueError(f"edict_p must be in (0.5, 1], got {self.edict_p}")
        if self.smoothing_steps < 0 or self.extra_denoise_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.private_step + self.smoothing_steps > self.steps:
            raise ValueError("private window plus smoothing exceeds the schedule")
        if self.extra_denoise_steps > self.steps:
            raise ValueError("extra_denoise_steps exceeds the schedule")

    @property
    def private_step(self) -> int:
        return int(math.floor(self.xi_priv * self.steps + 1e-9))

    @property
    def public_step(self) -> int:
        return int(math.floor(self.xi_pub * self.steps + 1e-9))


@dataclass(frozen=True)
class HideTrace:
    """Intermediates of one hiding run, for diagnostics and tests."""

    ref_image: ImageBuffer
    ref_latent: np.ndarray
    secret_latents: tuple[np.ndarray, ...]
    protected: np.ndarray
    fused: np.ndarray
    stego_latent: np.ndarray


@dataclass(frozen=True)
class RevealReport:
    """Per-segment reconstructions for one user."""

    user_index: int
    images: tuple[ImageBuffer, ...]
    latents: tuple[np.ndarray, ...]
    decrypted: tuple[np.ndarray, ...] = field(repr=False, default=())

    def __post_init__(self) -> None:
        if len(self.images) != len(self.latents):
            raise ValueError("image and latent segment counts differ")

    def diagnostics_against(self, reference_latents) -> list[float]:
        """Correlation of each decrypted segment against reference noisy
        latents (available to whoever holds the originals)."""
        if len(reference_latents) != len(self.decrypted):
            raise ValueError("reference count does not match segments")
        return [latent_corr(d, r) for d, r in zip(self.decrypted, reference_latents)]


# ------------------------------------------------------------------ backends


class LocalToyBackend:
    """In-process backend: toy codec plus closed-form predictor."""

    concurrency_safe = True

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return (4, height // 4, width // 4)

    def encode(self, img: ImageBuffer) -> np.ndarray:
        return toy_encode(img)

    def decode(self, z: np.ndarray) -> ImageBuffer:
        return toy_decode(z)

    def predictor(self, sched: DiffusionSchedule):
        return ToyPredictor(sched)


class _RemotePredictor:
    def __init__(self, session: wire.Session, sched: DiffusionSchedule, guidance: float):
        self.session = session
        self.sched = sched
        self.guidance = guidance
        self.concurrency_safe = False

    def predict(self, latent: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return self.session.predict_noise(
            latent,
            base_timestep(self.sched, t),
            cond.prompt,
            ref_latent=cond.ref_latent,
            ref_weight=cond.ref_weight,
            guidance=self.guidance,
        )


class RemoteBackend:
    """Backend over a protocol session; latent dims come from ``info``."""

    def __init__(self, session: wire.Session, guidance: float = wire.DEFAULT_GUIDANCE):
        self.session = session
        self.guidance = guidance
        self.info = session.info()
        if self.info.protocol_version != wire.PROTOCOL_VERSION:
            raise wire.ProtocolError(
                f"server speaks protocol {self.info.protocol_version}, "
                f"client supports {wire.PROTOCOL_VERSION}"
            )
        self.concurrency_safe = self.info.concurrency_safe

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return self.info.latent_dims

    def encode(self, img: ImageBuffer) -> np.ndarray:
        return self.session.encode_image(img)

    def decode(self, z: np.ndarray) -> ImageBuffer:
        return self.session.decode_latent(z)

    def predictor(self, sched: DiffusionSchedule):
        return _RemotePredictor(self.session, sched, self.guidance)


def resolve_backend(spec):
    """``"toy"``, a ``host:port`` address (``tcp:`` prefix allowed), or an
    already-built backend object."""
    if spec == "toy":
        return LocalToyBackend()
    if isinstance(spec, str):
        return RemoteBackend(wire.connect(spec))
    return spec


# ------------------------------------------------------------- latent fusion


def fuse_latents(z_prot: np.ndarray, z_ref: np.ndarray, alpha: float, key: OrthoKey) -> np.ndarray:
    """Blend the keyed mix of the tiled latent with the reference latent:
    ``sqrt(alpha) * K(z) + sqrt(1 - alpha) * z_ref``."""
    if z_prot.shape != z_ref.shape:
        raise ValueError(f"latent shapes differ: {z_prot.shape} vs {z_ref.shape}")
    mixed = ortho_apply(key, np.asarray(z_prot, dtype=np.float64).ravel())
    out = math.sqrt(alpha) * mixed + math.sqrt(1.0 - alpha) * np.asarray(z_ref).ravel()
    return out.reshape(z_prot.shape)


def decompose_latents(z_pub: np.ndarray, z_ref: np.ndarray, alpha: float, key: OrthoKey) -> np.ndarray:
    """Exact algebraic inverse of :func:`fuse_latents`."""
    if z_pub.shape != z_ref.shape:
        raise ValueError(f"latent shapes differ: {z_pub.shape} vs {z_ref.shape}")
    centered = (
        np.asarray(z_pub, dtype=np.float64).ravel()
        - math.sqrt(1.0 - alpha) * np.asarray(z_ref).ravel()
    ) / math.sqrt(alpha)
    return ortho_inverse(key, centered).reshape(z_pub.shape)


def concat_segments(segments, n1: int, n2: int) -> np.ndarray:
    """Tile segments row-major into an ``n1 x n2`` spatial grid: segment j
    (1-based) lands in grid cell ((j-1) // n2, (j-1) % n2)."""
    if len(segments) != n1 * n2:
        raise ValueError(f"expected {n1 * n2} segments, got {len(segments)}")
    rows = [np.concatenate(segments[r * n2 : (r + 1) * n2], axis=2) for r in range(n1)]
    return np.concatenate(rows, axis=1)


def split_segments(z: np.ndarray, n1: int, n2: int) -> list[np.ndarray]:
    c, h, w = z.shape
    if h % n1 or w % n2:
        raise ValueError(f"latent {z.shape} not divisible into a ({n1}, {n2}) grid")
    sh, sw = h // n1, w // n2
    return [
        z[:, r * sh : (r + 1) * sh, q * sw : (q + 1) * sw]
        for r in range(n1)
        for q in range(n2)
    ]


# ------------------------------------------------------------------ stages


def _schedule(cfg: StegoConfig) -> DiffusionSchedule:
    return make_schedule(cfg.steps, cfg.xi_priv)


def refgen(
    pub_seed: int,
    prompt: str,
    sched: DiffusionSchedule,
    backend_obj,
    latent_shape: tuple[int, int, int],
) -> tuple[ImageBuffer, np.ndarray]:
    """Deterministic reference image and its partial-run noisy latent.

    A seeded Gaussian latent is fully denoised under the prompt, decoded,
    and the decoded image's latent is inverted back to the partial-run
    step.  Both ends of a conversation reproduce this locally, so the
    reference is never transmitted.
    """
    pred = backend_obj.predictor(sched)
    cond = Condition(prompt)
    rng = np.random.default_rng(pub_seed)
    z = rng.standard_normal(latent_shape)
    z0 = ddim_denoise(z, sched.steps, 0, pred, cond, sched)
    image = backend_obj.decode(z0)
    z_ref = ddim_invert(backend_obj.encode(image), 0, sched.active_steps, pred, cond, sched)
    return image, z_ref


def _segment_dims(cfg: StegoConfig, full_shape: tuple[int, int, int]) -> tuple[int, int, int]:
    c, h, w = full_shape
    if h % cfg.n1 or w % cfg.n2:
        raise ValueError(f"latent {full_shape} not divisible into a ({cfg.n1}, {cfg.n2}) grid")
    return c, h // cfg.n1, w // cfg.n2


def _invert_secret(z0, t_hi, pred, cond, sched, cfg):
    if cfg.use_edict:
        x, y = edict_invert((z0, z0), 0, t_hi, pred, cond, sched, cfg.edict_p)
        return (x + y) / 2.0
    return ddim_invert(z0, 0, t_hi, pred, cond, sched)


def hide(secrets, cfg: StegoConfig, backend_obj=None) -> ImageBuffer:
    return hide_traced(secrets, cfg, backend_obj)[0]


def hide_traced(secrets, cfg: StegoConfig, backend_obj=None) -> tuple[ImageBuffer, HideTrace]:
    """Embed ``n_secrets`` equally sized secret images into one carrier."""
    cfg.validate()
    if len(secrets) != cfg.n_secrets:
        raise ValueError(f"{len(secrets)} secrets for n_secrets = {cfg.n_secrets}")
    h0, w0 = secrets[0].height, secrets[0].width
    for img in secrets:
        if (img.height, img.width) != (h0, w0):
            raise ValueError("all secrets must share dimensions")
    if h0 % cfg.n1 or w0 % cfg.n2:
        raise ValueError(f"secret {h0}x{w0} not divisible by ({cfg.n1}, {cfg.n2})")

    backend_obj = resolve_backend(cfg.backend if backend_obj is None else backend_obj)
    sched = _schedule(cfg)
    pred = backend_obj.predictor(sched)
    null_cond = Condition("")
    k_priv = cfg.private_step

    full_shape = backend_obj.latent_shape(h0, w0)
    ref_image, z_ref = refgen(cfg.pub_seed, cfg.prompt, sched, backend_obj, full_shape)
    seg_shape = _segment_dims(cfg, full_shape)
    seg_dim = int(np.prod(seg_shape))

    segments = []
    secret_latents = []
    for img, seed in zip(secrets, cfg.priv_seeds):
        z0 = backend_obj.encode(downsample(img, cfg.n1, cfg.n2))
        if z0.shape != seg_shape:
            raise ValueError(f"segment latent {z0.shape} does not match {seg_shape}")
        z_sec = _invert_secret(z0, k_priv, pred, null_cond, sched, cfg)
        secret_latents.append(z_sec)
        key = build_random_basis(seg_dim, cfg.gamma_priv, seed)
        protected = ortho_apply(key, z_sec.ravel()).reshape(seg_shape)
        protected = ddim_invert(
            protected, k_priv, k_priv + cfg.smoothing_steps, pred, null_cond, sched
        )
        segments.append(protected)

    z_prot = concat_segments(segments, cfg.n1, cfg.n2)
    fuse_key = build_random_basis(z_prot.size, cfg.gamma_fuse, cfg.pub_seed)
    z_pub = fuse_latents(z_prot, z_ref, cfg.alpha, fuse_key)

    pub_cond = Condition(cfg.prompt, z_ref, cfg.ref_weight)
    if cfg.use_edict:
        x, y = edict_denoise(
            (z_pub, z_pub), cfg.public_step, 0, pred, pub_cond, sched, cfg.edict_p
        )
        stego_latent = (x + y) / 2.0
    else:
        stego_latent = ddim_denoise(z_pub, cfg.public_step, 0, pred, pub_cond, sched)
    stego = backend_obj.decode(stego_latent)
    trace = HideTrace(
        ref_image=ref_image,
        ref_latent=z_ref,
        secret_latents=tuple(secret_latents),
        protected=z_prot,
        fused=z_pub,
        stego_latent=stego_latent,
    )
    return stego, trace


def reveal(
    stego: ImageBuffer,
    user_index: int,
    priv_seed: int,
    cfg: StegoConfig,
    backend_obj=None,
) -> RevealReport:
    """Reconstruct every segment with one user's key.

    The designated segment decrypts to a faithful latent; the others stay
    scrambled.  ``extra_denoise_steps`` first projects a degraded carrier
    back toward the image manifold under the public condition before the
    inversion starts.
    """
    cfg.validate()
    if not 1 <= user_index <= cfg.n_secrets:
        raise ValueError(f"user index {user_index} outside [1, {cfg.n_secrets}]")
    backend_obj = resolve_backend(cfg.backend if backend_obj is None else backend_obj)
    sched = _schedule(cfg)
    pred = backend_obj.predictor(sched)
    null_cond = Condition("")
    k_priv = cfg.private_step

    full_shape = backend_obj.latent_shape(stego.height, stego.width)
    _, z_ref = refgen(cfg.pub_seed, cfg.prompt, sched, backend_obj, full_shape)
    seg_shape = _segment_dims(cfg, full_shape)
    seg_dim = int(np.prod(seg_shape))
    pub_cond = Condition(cfg.prompt, z_ref, cfg.ref_weight)

    z = backend_obj.encode(stego)
    if z.shape != full_shape:
        raise ValueError(f"carrier latent {z.shape} does not match {full_shape}")
    if cfg.extra_denoise_steps > 0:
        z = ddim_denoise(z, cfg.extra_denoise_steps, 0, pred, pub_cond, sched)
    if cfg.use_edict:
        x, y = edict_invert((z, z), 0, cfg.public_step, pred, pub_cond, sched, cfg.edict_p)
        z_tilde = (x + y) / 2.0
    else:
        z_tilde = ddim_invert(z, 0, cfg.public_step, pred, pub_cond, sched)

    fuse_key = build_random_basis(z_tilde.size, cfg.gamma_fuse, cfg.pub_seed)
    z_prot = decompose_latents(z_tilde, z_ref, cfg.alpha, fuse_key)
    z_prot = ddim_denoise(
        z_prot, k_priv + cfg.smoothing_steps, k_priv, pred, null_cond, sched
    )

    user_key = build_random_basis(seg_dim, cfg.gamma_priv, priv_seed)
    decrypted = [
        ortho_inverse(user_key, seg.ravel()).reshape(seg_shape)
        for seg in split_segments(z_prot, cfg.n1, cfg.n2)
    ]

    if cfg.joint_denoise:
        z_full = concat_segments(decrypted, cfg.n1, cfg.n2)
        z_full = ddim_denoise(z_full, k_priv, 0, pred, null_cond, sched)
        final = split_segments(z_full, cfg.n1, cfg.n2)
    else:
        final = [ddim_denoise(seg, k_priv, 0, pred, null_cond, sched) for seg in decrypted]

    images = tuple(upsample(backend_obj.decode(seg), cfg.n1, cfg.n2) for seg in final)
    return RevealReport(
        user_index=user_index,
        images=images,
        latents=tuple(np.asarray(s) for s in final),
        decrypted=tuple(decrypted),
    )
