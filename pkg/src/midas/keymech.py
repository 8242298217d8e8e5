"""Seeded invertible latent encryption.

Two mechanisms operate on flattened latent vectors of length ``d``:

* random-basis keys: a dense orthonormal block drawn from a seeded QR
  factorization, applied to a seeded subset of ``floor(strength * d)``
  coordinates.  Coordinates outside the subset pass through unchanged, so
  ``strength`` controls the mixed fraction and ``strength == 0`` is the
  exact identity.
* sign-flip keys: seeded elementwise multiplication by +-1 (its own
  inverse), kept as a comparison baseline.

Keys are pure functions of ``(dim, strength, seed)``.  The generator is
numpy's PCG64 (``numpy.random.default_rng``); the normal block is drawn
first, then the coordinate subset, so reconstruction is bit-identical
everywhere the same numpy stream is available.  A frozen generator test
vector lives in the test suite.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OrthoKey",
    "FlipKey",
    "build_random_basis",
    "ortho_apply",
    "ortho_inverse",
    "build_flip",
    "flip_apply",
    "write_key",
    "read_key",
    "key_to_bytes",
    "key_from_bytes",
]

KEY_MAGIC = b"MKEY"
KEY_VERSION = 1
_KEY_HEADER = struct.Struct("<4sHIdQ")


def _mixed_count(dim: int, strength: float) -> int:
    # floor(strength * dim) with a guard against 0.29 * 100 = 28.999... style
    # float droop on products that are mathematically integral.
    return int(math.floor(strength * dim + 1e-9))


@dataclass(frozen=True)
class OrthoKey:
    """Factored seeded orthonormal transform on a coordinate subset.

    ``block`` is a ``(m, m)`` orthonormal matrix with ``m = floor(strength *
    dim)`` and ``positions`` the ``m`` distinct coordinates it acts on, in
    draw order.  The implied ``dim x dim`` matrix is never materialized.
    """

    dim: int
    strength: float
    seed: int
    positions: np.ndarray = field(repr=False)
    block: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        m = _mixed_count(self.dim, self.strength)
        if self.positions.shape != (m,) or self.block.shape != (m, m):
            raise ValueError("key factors do not match dim and strength")


@dataclass(frozen=True)
class FlipKey:
    """Seeded diagonal +-1 transform; involutive."""

    dim: int
    seed: int
    signs: np.ndarray = field(repr=False)


def build_random_basis(dim: int, strength: float, seed: int) -> OrthoKey:
    """Construct the seeded orthonormal key for ``dim`` coordinates.

    The dense block is the Q factor of a seeded standard-normal matrix,
    sign-fixed so the R diagonal is nonnegative (column j of Q is negated
    when R[j, j] < 0), which makes Q unique across linear-algebra
    backends.  ``strength = 0`` yields the identity (empty block).
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    m = _mixed_count(dim, strength)
    rng = np.random.default_rng(seed)
    if m == 0:
        block = np.zeros((0, 0))
        positions = np.zeros(0, dtype=np.int64)
    else:
        normal = rng.standard_normal((m, m))
        q, r = np.linalg.qr(normal)
        q = q * np.where(np.diag(r) < 0.0, -1.0, 1.0)
        block = np.ascontiguousarray(q)
        positions = rng.choice(dim, size=m, replace=False).astype(np.int64)
    return OrthoKey(dim=dim, strength=strength, seed=seed, positions=positions, block=block)


def _check_length(key: OrthoKey, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != key.dim:
        raise ValueError(f"vector length {z.shape} does not match key dim {key.dim}")
    return z


def _blocked_matvec(block: np.ndarray, v: np.ndarray, chunk_rows: int | None) -> np.ndarray:
    if chunk_rows is None or chunk_rows >= block.shape[0]:
        return block @ v
    out = np.empty(block.shape[0])
    for lo in range(0, block.shape[0], chunk_rows):
        out[lo : lo + chunk_rows] = block[lo : lo + chunk_rows] @ v
    return out


def ortho_apply(key: OrthoKey, z: np.ndarray, chunk_rows: int | None = None) -> np.ndarray:
    """Apply the key: the selected subvector is multiplied by the block,
    every other coordinate is left identical.

    ``chunk_rows`` bounds the rows per matrix-vector product for very large
    blocks; the result is unchanged.
    """
    z = _check_length(key, z)
    out = z.copy()
    if key.positions.size:
        out[key.positions] = _blocked_matvec(key.block, z[key.positions], chunk_rows)
    return out


def ortho_inverse(key: OrthoKey, z_enc: np.ndarray, chunk_rows: int | None = None) -> np.ndarray:
    """Exact adjoint of :func:`ortho_apply` (transposed block, same subset)."""
    z_enc = _check_length(key, z_enc)
    out = z_enc.copy()
    if key.positions.size:
        out[key.positions] = _blocked_matvec(key.block.T, z_enc[key.positions], chunk_rows)
    return out


def build_flip(dim: int, seed: int) -> FlipKey:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
    return FlipKey(dim=dim, seed=seed, signs=signs)


def flip_apply(key: FlipKey, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != key.dim:
        raise ValueError(f"vector length {z.shape} does not match key dim {key.dim}")
    return z * key.signs


def key_to_bytes(key: OrthoKey) -> bytes:
    """Serialize the seed triple; block and positions are never stored."""
    return _KEY_HEADER.pack(KEY_MAGIC, KEY_VERSION, key.dim, key.strength, key.seed)


def key_from_bytes(blob: bytes) -> OrthoKey:
    if len(blob) != _KEY_HEADER.size:
        raise ValueError(f"key record must be {_KEY_HEADER.size} bytes, got {len(blob)}")
    magic, version, dim, strength, seed = _KEY_HEADER.unpack(blob)
    if magic != KEY_MAGIC:
        raise ValueError(f"bad key magic {magic!r}")
    if version != KEY_VERSION:
        raise ValueError(f"unsupported key version {version}")
    return build_random_basis(dim, strength, seed)


def write_key(key: OrthoKey, path) -> None:
    with open(path, "wb") as fh:
        fh.write(key_to_bytes(key))


def read_key(path) -> OrthoKey:
    with open(path, "rb") as fh:
        return key_from_bytes(fh.read())
