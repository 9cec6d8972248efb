"""Counter-based standard-normal stream.

Every draw is a pure function of ``(seed, pixel, sample, class)``: a
SplitMix64 finalizer hashes the counter into 53 uniform bits which go through
the inverse normal CDF.  Any subset of pixels or samples can be regenerated
independently, so results do not depend on iteration order or on how work is
partitioned.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_TWO53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps by design
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint64)


def seed_key(seed: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        return _mix(_u64(int(seed) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)


def pixel_keys(seed: int, num_pixels: int) -> np.ndarray:
    idx = np.arange(num_pixels, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(seed_key(seed) ^ _mix((idx + np.uint64(1)) * _GOLDEN))


def sample_keys(samples: np.ndarray, num_classes: int) -> np.ndarray:
    """(len(samples), K) keys for sample indices ``samples`` and classes 0..K-1."""
    t = _u64(samples)[:, None]
    k = np.arange(num_classes, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        return _mix(((t << np.uint64(20)) | k) * _M2 + _GOLDEN)


def uniform_from_keys(h: np.ndarray) -> np.ndarray:
    """Map hashed keys to uniforms strictly inside (0, 1)."""
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53


def standard_normal(seed: int, shape: tuple[int, int, int], samples) -> np.ndarray:
    """Draw eps of shape ``(len(samples), H, W, K)`` for the given sample indices."""
    h, w, k = shape
    pk = pixel_keys(seed, h * w).reshape(h, w, 1)
    sk = sample_keys(np.asarray(samples), k)
    out = np.empty((len(sk), h, w, k))
    for i, key in enumerate(sk):
        out[i] = ndtri(uniform_from_keys(_mix(pk ^ key[None, None, :])))
    return out


def scene_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Sequential generator for scene construction; independent per ``stream``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, stream]))
