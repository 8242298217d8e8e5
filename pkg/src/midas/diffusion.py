"""Deterministic DDIM sampling/inversion and coupled exact inversion.

All samplers run over a :class:`DiffusionSchedule` whose ``alpha_bar[t]``
is the cumulative signal coefficient at step ``t`` (``alpha_bar[0] == 1``,
strictly decreasing).  Noise prediction is delegated to a pluggable
backend satisfying the :class:`NoisePredictor` contract; the closed-form
:class:`ToyPredictor` makes every sampler runnable and checkable at desk
scale with no external model.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

__all__ = [
    "DiffusionSchedule",
    "Condition",
    "NoisePredictor",
    "ToyPredictor",
    "make_schedule",
    "base_timestep",
    "ddim_step",
    "ddim_invert_step",
    "ddim_denoise",
    "ddim_invert",
    "edict_denoise",
    "edict_invert",
]

BASE_STEPS = 1000
BETA_START = 0.00085
BETA_END = 0.012

TOY_SIGMA0 = 0.5
TOY_PATTERN_STD = 0.25
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class DiffusionSchedule:
    """Subsampled cumulative-signal schedule with a partial-run fraction."""

    steps: int
    alpha_bar: np.ndarray
    xi: float

    def __post_init__(self) -> None:
        ab = self.alpha_bar
        if ab.shape != (self.steps + 1,):
            raise ValueError("alpha_bar must have length steps + 1")
        if ab[0] != 1.0 or np.any(np.diff(ab) >= 0) or np.any(ab <= 0) or np.any(ab > 1):
            raise ValueError("alpha_bar must start at 1 and strictly decrease within (0, 1]")

    @property
    def active_steps(self) -> int:
        """Last step index of the partial run, ``floor(xi * steps)``."""
        return int(math.floor(self.xi * self.steps + 1e-9))


def make_schedule(steps: int, xi: float = 1.0) -> DiffusionSchedule:
    """Scaled-linear beta schedule (sqrt-beta linear over 1000 base steps),
    uniformly subsampled to ``steps``."""
    if steps < 1 or steps > BASE_STEPS:
        raise ValueError(f"steps must be in [1, {BASE_STEPS}], got {steps}")
    if not 0.0 < xi <= 1.0:
        raise ValueError(f"xi must be in (0, 1], got {xi}")
    sqrt_beta = np.linspace(math.sqrt(BETA_START), math.sqrt(BETA_END), BASE_STEPS)
    full = np.concatenate([[1.0], np.cumprod(1.0 - sqrt_beta**2)])
    idx = np.rint(np.arange(steps + 1) * BASE_STEPS / steps).astype(np.int64)
    return DiffusionSchedule(steps=steps, alpha_bar=full[idx], xi=xi)


def base_timestep(sched: DiffusionSchedule, t: int) -> int:
    """Base-schedule index (0..1000) corresponding to subsampled step ``t``."""
    return int(round(t * BASE_STEPS / sched.steps))


@dataclass(frozen=True)
class Condition:
    """Denoiser conditioning: prompt token plus optional reference latent."""

    prompt: str = ""
    ref_latent: np.ndarray | None = None
    ref_weight: float = 0.0

    def __post_init__(self) -> None:
        if self.ref_latent is None and self.ref_weight != 0.0:
            raise ValueError("ref_weight must be 0 without a ref_latent")
        if not 0.0 <= self.ref_weight <= 1.0:
            raise ValueError(f"ref_weight must be in [0, 1], got {self.ref_weight}")


class NoisePredictor(Protocol):
    """Behavioral contract for noise-prediction backends.

    ``predict`` must return a tensor of the latent's shape and be
    deterministic for identical inputs.  ``concurrency_safe`` declares
    whether concurrent calls are allowed.
    """

    concurrency_safe: bool

    def predict(self, latent: np.ndarray, t: int, cond: Condition) -> np.ndarray: ...


def _prompt_pattern(prompt: str, shape: tuple[int, ...], pattern_std: float) -> np.ndarray:
    """Deterministic low-frequency conditioning mean; empty prompt is the
    zero-mean (unconditional) prior.

    The fourth channel is the luminance of the first three so patterns sit
    in the same channel layout the toy codec produces.
    """
    if not prompt:
        return np.zeros(shape)
    from .codec import bilinear_resize  # local import, avoids cycle at module load

    c, h, w = shape
    seed = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    coarse = rng.standard_normal((3, 4, 4))
    rgb = np.stack([bilinear_resize(coarse[k], h, w) for k in range(3)])
    luma = np.tensordot(LUMA_WEIGHTS, rgb, axes=(0, 0))
    base = np.concatenate([rgb, luma[None]], axis=0)[:c]
    return base * (pattern_std / (base.std() + 1e-12))


class ToyPredictor:
    """Closed-form optimal noise predictor for a Gaussian data prior.

    For prior N(mu, sigma0^2 I) at noise level ``a = alpha_bar[t]`` the
    posterior mean of the clean latent is

        E[x0 | z] = mu + (sigma0^2 sqrt(a) / (a sigma0^2 + 1 - a)) (z - sqrt(a) mu)

    and the implied noise estimate is ``(z - sqrt(a) E[x0|z]) / sqrt(1-a)``.
    ``mu`` hashes the prompt into a fixed low-frequency pattern, blended
    toward the condition's reference latent by ``ref_weight``.
    """

    concurrency_safe = True

    def __init__(
        self,
        sched: DiffusionSchedule,
        sigma0: float = TOY_SIGMA0,
        pattern_std: float = TOY_PATTERN_STD,
    ) -> None:
        self.sched = sched
        self.sigma0 = sigma0
        self.pattern_std = pattern_std
        self._patterns: dict[tuple[str, tuple[int, ...]], np.ndarray] = {}

    def _mean(self, cond: Condition, shape: tuple[int, ...]) -> np.ndarray:
        key = (cond.prompt, shape)
        base = self._patterns.get(key)
        if base is None:
            base = _prompt_pattern(cond.prompt, shape, self.pattern_std)
            self._patterns[key] = base
        if cond.ref_latent is not None and cond.ref_weight > 0.0:
            return (1.0 - cond.ref_weight) * base + cond.ref_weight * cond.ref_latent
        return base

    def predict(self, latent: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        if not 1 <= t <= self.sched.steps:
            raise ValueError(f"timestep {t} outside [1, {self.sched.steps}]")
        a = self.sched.alpha_bar[t]
        mu = self._mean(cond, latent.shape)
        shrink = self.sigma0**2 * math.sqrt(a) / (a * self.sigma0**2 + 1.0 - a)
        x0 = mu + shrink * (latent - math.sqrt(a) * mu)
        return (latent - math.sqrt(a) * x0) / math.sqrt(1.0 - a)


def _check_step(sched: DiffusionSchedule, t: int) -> None:
    if not 1 <= t <= sched.steps:
        raise ValueError(f"step {t} outside [1, {sched.steps}]")


def ddim_step(
    z_t: np.ndarray, t: int, predictor: NoisePredictor, cond: Condition, sched: DiffusionSchedule
) -> np.ndarray:
    """One deterministic (eta = 0) denoising step, t -> t-1."""
    _check_step(sched, t)
    a_t = sched.alpha_bar[t]
    a_prev = sched.alpha_bar[t - 1]
    eps = predictor.predict(z_t, t, cond)
    x0 = (z_t - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
    return math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps


def ddim_invert_step(
    z_prev: np.ndarray, t: int, predictor: NoisePredictor, cond: Condition, sched: DiffusionSchedule
) -> np.ndarray:
    """First-order inversion of :func:`ddim_step`: the update solved for
    ``z_t`` with the noise estimate evaluated at ``z_{t-1}``."""
    _check_step(sched, t)
    a_t = sched.alpha_bar[t]
    a_prev = sched.alpha_bar[t - 1]
    eps = predictor.predict(z_prev, t, cond)
    x0 = (z_prev - math.sqrt(1.0 - a_prev) * eps) / math.sqrt(a_prev)
    return math.sqrt(a_t) * x0 + math.sqrt(1.0 - a_t) * eps


def ddim_denoise(
    z: np.ndarray,
    t_from: int,
    t_to: int,
    predictor: NoisePredictor,
    cond: Condition,
    sched: DiffusionSchedule,
) -> np.ndarray:
    """Denoise from step ``t_from`` down to ``t_to``."""
    if not 0 <= t_to <= t_from <= sched.steps:
        raise ValueError(f"bad step range {t_from} -> {t_to}")
    for t in range(t_from, t_to, -1):
        z = ddim_step(z, t, predictor, cond, sched)
    return z


def ddim_invert(
    z: np.ndarray,
    t_from: int,
    t_to: int,
    predictor: NoisePredictor,
    cond: Condition,
    sched: DiffusionSchedule,
) -> np.ndarray:
    """Invert from step ``t_from`` up to ``t_to``."""
    if not 0 <= t_from <= t_to <= sched.steps:
        raise ValueError(f"bad step range {t_from} -> {t_to}")
    for t in range(t_from + 1, t_to + 1):
        z = ddim_invert_step(z, t, predictor, cond, sched)
    return z


def _edict_coeffs(sched: DiffusionSchedule, t: int) -> tuple[float, float]:
    a_t = sched.alpha_bar[t]
    a_prev = sched.alpha_bar[t - 1]
    a = math.sqrt(a_prev / a_t)
    b = math.sqrt(1.0 - a_prev) - math.sqrt(a_prev * (1.0 - a_t) / a_t)
    return a, b


def _check_pair(pair: tuple[np.ndarray, np.ndarray], mix: float) -> tuple[np.ndarray, np.ndarray]:
    x, y = pair
    if x.shape != y.shape:
        raise ValueError(f"pair shapes differ: {x.shape} vs {y.shape}")
    if not 0.5 < mix <= 1.0:
        raise ValueError(f"mixing coefficient must be in (0.5, 1], got {mix}")
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def edict_denoise(
    pair: tuple[np.ndarray, np.ndarray],
    t_from: int,
    t_to: int,
    predictor: NoisePredictor,
    cond: Condition,
    sched: DiffusionSchedule,
    mix: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Coupled denoising: alternating cross-predictions then a sequential
    linear mixing layer, every sub-step individually invertible."""
    x, y = _check_pair(pair, mix)
    if not 0 <= t_to <= t_from <= sched.steps:
        raise ValueError(f"bad step range {t_from} -> {t_to}")
    for t in range(t_from, t_to, -1):
        a, b = _edict_coeffs(sched, t)
        x = a * x + b * predictor.predict(y, t, cond)
        y = a * y + b * predictor.predict(x, t, cond)
        x = mix * x + (1.0 - mix) * y
        y = mix * y + (1.0 - mix) * x
    return x, y


def edict_invert(
    pair: tuple[np.ndarray, np.ndarray],
    t_from: int,
    t_to: int,
    predictor: NoisePredictor,
    cond: Condition,
    sched: DiffusionSchedule,
    mix: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact algebraic inverse of :func:`edict_denoise` (sub-steps undone in
    reverse order)."""
    x, y = _check_pair(pair, mix)
    if not 0 <= t_from <= t_to <= sched.steps:
        raise ValueError(f"bad step range {t_from} -> {t_to}")
    for t in range(t_from + 1, t_to + 1):
        a, b = _edict_coeffs(sched, t)
        y = (y - (1.0 - mix) * x) / mix
        x = (x - (1.0 - mix) * y) / mix
        y = (y - b * predictor.predict(x, t, cond)) / a
        x = (x - b * predictor.predict(y, t, cond)) / a
    return x, y
