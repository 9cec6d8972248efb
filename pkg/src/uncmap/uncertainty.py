"""Per-pixel Gaussian logits -> expected probabilities -> drivable score map.

Each BEV pixel carries K Gaussian logits ``N(mu, sigma^2)``.  Sampling uses
the reparameterization ``z = mu + sigma * eps`` with ``eps`` from the
counter-based stream in :mod:`uncmap.rng`, so the forward pass and the
analytic gradients see the same noise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import entr

from . import rng
from .bev_core import ClassTaxonomy, ConfigurationError, DataError, GridSpec, SemanticGrid

LOG_SIGMA_MIN, LOG_SIGMA_MAX = -7.0, 3.0
DEFAULT_MAP_SAMPLES = 128
DEFAULT_LOSS_SAMPLES = 32
DEFAULT_TAU_DRIVE = 0.3
_CHUNK = 16
_LN2 = np.log(2.0)

DSMP_MAGIC = b"DSMP"
LGTF_MAGIC = b"LGTF"


@dataclass(frozen=True)
class McConfig:
    num_samples: int = DEFAULT_MAP_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigurationError(f"num_samples must be >= 1, got {self.num_samples}")


@dataclass(frozen=True)
class LogitField:
    """Gaussian logits on a grid.

    ``log_sigma=None`` is the degenerate zero-spread field (every sample is
    ``mu``).  Otherwise ``log_sigma`` is clamped to ``[-7, 3]``.
    """

    spec: GridSpec
    mu: np.ndarray = field(repr=False)
    log_sigma: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        if mu.ndim != 3 or mu.shape[:2] != self.spec.shape:
            raise DataError(f"mu must be (H, W, K) with H, W = {self.spec.shape}, got {mu.shape}")
        if not np.all(np.isfinite(mu)):
            raise DataError("mu contains non-finite values")
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        if self.log_sigma is not None:
            ls = np.array(self.log_sigma, dtype=np.float64)
            if ls.shape != mu.shape:
                raise DataError(f"log_sigma shape {ls.shape} != mu shape {mu.shape}")
            if np.any(np.isnan(ls)):
                raise DataError("log_sigma contains NaN")
            ls = np.clip(ls, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
            ls.flags.writeable = False
            object.__setattr__(self, "log_sigma", ls)

    @property
    def num_classes(self) -> int:
        return self.mu.shape[2]

    @property
    def sigma(self) -> np.ndarray:
        if self.log_sigma is None:
            return np.zeros_like(self.mu)
        return np.exp(self.log_sigma)


@dataclass(frozen=True)
class DrivableScoreMap:
    spec: GridSpec
    p_pos: np.ndarray = field(repr=False)
    h_group: np.ndarray = field(repr=False)
    s_safe: np.ndarray = field(repr=False)
    nondrivable_mask: np.ndarray = field(repr=False)
    tau_drive: float = DEFAULT_TAU_DRIVE

    def without_uncertainty(self) -> "DrivableScoreMap":
        """Baseline map with the group entropy forced to zero (``s_safe = p_pos``)."""
        h = np.zeros_like(self.h_group)
        return replace(self, h_group=h, s_safe=safety_score(self.p_pos, h))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _iter_eps(lf: LogitField, cfg: McConfig):
    """Yield ``(t, eps_t)`` for t = 0..T-1; eps is None for zero-spread fields."""
    shape = lf.mu.shape
    for start in range(0, cfg.num_samples, _CHUNK):
        ts = np.arange(start, min(start + _CHUNK, cfg.num_samples))
        if lf.log_sigma is None:
            for t in ts:
                yield int(t), None
            continue
        eps = rng.standard_normal(cfg.seed, shape, ts)
        for t, e in zip(ts, eps):
            yield int(t), e


def sample_logits(lf: LogitField, cfg: McConfig) -> np.ndarray:
    """All T reparameterized samples, shape ``(T, H, W, K)``."""
    out = np.empty((cfg.num_samples,) + lf.mu.shape)
    sigma = lf.sigma
    for t, eps in _iter_eps(lf, cfg):
        out[t] = lf.mu if eps is None else lf.mu + sigma * eps
    return out


def expected_probabilities(lf: LogitField, cfg: McConfig) -> np.ndarray:
    """Monte-Carlo mean of softmax over sampled logits, shape ``(H, W, K)``.

    Samples are accumulated one at a time in index order so the sum is
    bit-stable regardless of chunking.  A zero-spread field has a single
    distinct sample, so the result is exactly ``softmax(mu)``.
    """
    if lf.log_sigma is None:
        return softmax(lf.mu)
    sigma = lf.sigma
    acc = np.zeros_like(lf.mu)
    for _, eps in _iter_eps(lf, cfg):
        acc += softmax(lf.mu if eps is None else lf.mu + sigma * eps)
    return acc / cfg.num_samples


def group_probability(pbar: np.ndarray, taxonomy: ClassTaxonomy) -> np.ndarray:
    pbar = np.asarray(pbar, dtype=float)
    if pbar.shape[-1] != taxonomy.num_classes:
        raise ConfigurationError(
            f"probabilities have {pbar.shape[-1]} classes, taxonomy has {taxonomy.num_classes}"
        )
    p = pbar[..., taxonomy.drivable_indicator()].sum(axis=-1)
    return np.clip(p, 0.0, 1.0)


def group_entropy(p_pos: np.ndarray) -> np.ndarray:
    """Binary entropy in bits; ``0 log 0 = 0`` so certainty gives exactly 0."""
    p = np.clip(np.asarray(p_pos, dtype=float), 0.0, 1.0)
    return np.clip((entr(p) + entr(1.0 - p)) / _LN2, 0.0, 1.0)


def safety_score(p_pos: np.ndarray, h_group: np.ndarray) -> np.ndarray:
    p_pos = np.asarray(p_pos, dtype=float)
    h_group = np.asarray(h_group, dtype=float)
    return p_pos * (1.0 - h_group) + 0.5 * h_group


def score_map_from_probabilities(
    spec: GridSpec, pbar: np.ndarray, taxonomy: ClassTaxonomy, tau_drive: float = DEFAULT_TAU_DRIVE
) -> DrivableScoreMap:
    p = group_probability(pbar, taxonomy)
    h = group_entropy(p)
    return DrivableScoreMap(spec, p, h, safety_score(p, h), p < tau_drive, float(tau_drive))


def build_score_map(
    lf: LogitField, taxonomy: ClassTaxonomy, cfg: McConfig, tau_drive: float = DEFAULT_TAU_DRIVE
) -> DrivableScoreMap:
    if lf.num_classes != taxonomy.num_classes:
        raise ConfigurationError(
            f"logit field has {lf.num_classes} classes, taxonomy has {taxonomy.num_classes}"
        )
    return score_map_from_probabilities(lf.spec, expected_probabilities(lf, cfg), taxonomy, tau_drive)


def perception_loss(lf: LogitField, target: SemanticGrid, cfg: McConfig):
    """Mean per-pixel ``-ln( mean_t softmax(mu + sigma*eps_t)[y] )``.

    Returns ``(loss, grad_mu, grad_log_sigma)``; ``grad_log_sigma`` is None
    for a zero-spread field.
    """
    if target.spec.shape != lf.spec.shape:
        raise DataError(f"target grid {target.spec.shape} != field grid {lf.spec.shape}")
    y = target.labels
    k = lf.num_classes
    if y.max() >= k:
        raise DataError(f"target label {int(y.max())} >= number of classes {k}")
    onehot = np.eye(k)[y]
    sigma = lf.sigma
    n_pix = y.size
    if lf.log_sigma is None:
        cfg = McConfig(1, cfg.seed)  # every sample equals mu
    tt = cfg.num_samples

    # per-pixel running sums of q_y and of q_y (e_y - q) [times eps]
    prob_y = np.zeros(y.shape)
    g_mu = np.zeros_like(lf.mu)
    g_ls = None if lf.log_sigma is None else np.zeros_like(lf.mu)
    for _, eps in _iter_eps(lf, cfg):
        q = softmax(lf.mu if eps is None else lf.mu + sigma * eps)
        qy = np.take_along_axis(q, y[..., None], axis=-1)
        prob_y += qy[..., 0]
        dz = qy * (onehot - q)
        g_mu += dz
        if g_ls is not None:
            g_ls += dz * sigma * eps
    prob_y /= tt
    per_pixel = -np.log(prob_y)
    scale = -1.0 / (n_pix * tt * prob_y[..., None])
    g_mu *= scale
    if g_ls is not None:
        g_ls *= scale
    return float(per_pixel.mean()), g_mu, g_ls


# -- serialization ---------------------------------------------------------

def write_score_map(path, smap: DrivableScoreMap) -> None:
    h, w = smap.spec.shape
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes()
        for a in (smap.p_pos, smap.h_group, smap.s_safe)
    )
    Path(path).write_bytes(DSMP_MAGIC + struct.pack("<II", h, w) + body)


def read_score_map(path, spec: GridSpec | None = None, tau_drive: float = DEFAULT_TAU_DRIVE) -> DrivableScoreMap:
    raw = Path(path).read_bytes()
    if raw[:4] != DSMP_MAGIC:
        raise DataError(f"{path}: not a DSMP file")
    h, w = struct.unpack("<II", raw[4:12])
    planes = np.frombuffer(raw[12:], dtype="<f4")
    if planes.size != 3 * h * w:
        raise DataError(f"{path}: truncated score map")
    p, hg, s = (a.astype(np.float64) for a in planes.reshape(3, h, w))
    spec = spec or GridSpec(height=h, width=w)
    return DrivableScoreMap(spec, p, hg, s, p < tau_drive, tau_drive)


def write_pgm(path, values: np.ndarray) -> None:
    """8-bit binary PGM of values in [0, 1] (scaled by 255, rounded)."""
    img = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_logit_field(path, lf: LogitField) -> None:
    h, w, k = lf.mu.shape
    ls = np.full_like(lf.mu, -np.inf) if lf.log_sigma is None else lf.log_sigma
    body = b"".join(
        np.ascontiguousarray(a[..., c], dtype="<f4").tobytes()
        for a in (lf.mu, ls) for c in range(k)
    )
    Path(path).write_bytes(LGTF_MAGIC + struct.pack("<III", h, w, k) + body)


def read_logit_field(path, spec: GridSpec | None = None) -> LogitField:
    raw = Path(path).read_bytes()
    if raw[:4] != LGTF_MAGIC:
        raise DataError(f"{path}: not a logit-field file")
    h, w, k = struct.unpack("<III", raw[4:16])
    planes = np.frombuffer(raw[16:], dtype="<f4")
    if planes.size != 2 * k * h * w:
        raise DataError(f"{path}: truncated logit field")
    planes = planes.reshape(2, k, h, w).astype(np.float64)
    mu = np.moveaxis(planes[0], 0, -1)
    ls = np.moveaxis(planes[1], 0, -1)
    spec = spec or GridSpec(height=h, width=w)
    return LogitField(spec, mu, None if np.all(np.isneginf(ls)) else ls)
