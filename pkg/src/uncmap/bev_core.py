"""Grid geometry, class taxonomy and the metric <-> pixel projection.

Axis convention: the row index grows with longitudinal (forward, ``x``)
distance and the column index grows with lateral (left-positive, ``y``)
distance.  Continuous pixel coordinate ``(u, v)`` lies inside pixel
``(floor(u), floor(v))``; pixel centers sit at ``(i + 0.5, j + 0.5)``.
Bounds are half-open: ``[0, H) x [0, W)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BEVG_MAGIC = b"BEVG"


class ConfigurationError(ValueError):
    """Inconsistent grid, taxonomy or scenario configuration."""


class DataError(ValueError):
    """Input data violates a contract (bad labels, malformed files)."""


@dataclass(frozen=True)
class GridSpec:
    """Raster geometry.  ``origin`` is the ego-frame position (meters) of the
    corner of pixel (0, 0); the default puts the ego at the center of pixel
    (16, 64) of a 128 x 128 grid at 0.5 m/px."""

    height: int = 128
    width: int = 128
    resolution: float = 0.5
    origin: tuple[float, float] = (-8.25, -32.25)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigurationError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if not self.resolution > 0:
            raise ConfigurationError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def in_bounds(self, rc: np.ndarray) -> np.ndarray:
        rc = np.asarray(rc, dtype=float)
        return (
            (rc[..., 0] >= 0) & (rc[..., 0] < self.height)
            & (rc[..., 1] >= 0) & (rc[..., 1] < self.width)
        )

    def pixel_centers(self) -> np.ndarray:
        """(H, W, 2) continuous coordinates of every pixel center."""
        rows, cols = np.meshgrid(
            np.arange(self.height) + 0.5, np.arange(self.width) + 0.5, indexing="ij"
        )
        return np.stack([rows, cols], axis=-1)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "resolution": self.resolution,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            height=int(d.get("height", 128)),
            width=int(d.get("width", 128)),
            resolution=float(d.get("resolution", 0.5)),
            origin=tuple(d.get("origin", cls.origin)),
        )


@dataclass(frozen=True)
class ClassTaxonomy:
    """Semantic classes and the drivable grouping used for ``p_pos``.

    ``centerline_class`` may or may not be part of ``drivable_set``; the
    choice is explicit in the constructor arguments.
    """

    num_classes: int = 4
    drivable_set: frozenset[int] = frozenset({1, 2})
    centerline_class: int = 2
    labels: tuple[str, ...] = ("offroad", "road", "centerline", "obstacle")
    offroad_class: int = 0
    road_class: int = 1
    obstacle_class: int = 3

    def __post_init__(self):
        k = self.num_classes
        if k < 2:
            raise ConfigurationError("need at least two classes")
        ds = frozenset(int(c) for c in self.drivable_set)
        object.__setattr__(self, "drivable_set", ds)
        if not ds:
            raise ConfigurationError("drivable_set is empty")
        if len(ds) >= k:
            raise ConfigurationError("drivable_set must be a strict subset of the classes")
        if any(c < 0 or c >= k for c in ds):
            raise ConfigurationError(f"drivable_set {sorted(ds)} outside 0..{k - 1}")
        for name in ("centerline_class", "offroad_class", "road_class", "obstacle_class"):
            c = getattr(self, name)
            if not 0 <= c < k:
                raise ConfigurationError(f"{name}={c} outside 0..{k - 1}")
        if len(self.labels) != k:
            raise ConfigurationError(f"expected {k} labels, got {len(self.labels)}")

    @property
    def centerline_is_drivable(self) -> bool:
        return self.centerline_class in self.drivable_set

    def drivable_indicator(self) -> np.ndarray:
        ind = np.zeros(self.num_classes, dtype=bool)
        ind[sorted(self.drivable_set)] = True
        return ind

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "drivable_set": sorted(self.drivable_set),
            "centerline_class": self.centerline_class,
            "centerline_is_drivable": self.centerline_is_drivable,
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassTaxonomy":
        base = cls()
        return cls(
            num_classes=int(d.get("num_classes", base.num_classes)),
            drivable_set=frozenset(d.get("drivable_set", base.drivable_set)),
            centerline_class=int(d.get("centerline_class", base.centerline_class)),
            labels=tuple(d.get("labels", base.labels)),
            offroad_class=int(d.get("offroad_class", base.offroad_class)),
            road_class=int(d.get("road_class", base.road_class)),
            obstacle_class=int(d.get("obstacle_class", base.obstacle_class)),
        )


@dataclass(frozen=True)
class SemanticGrid:
    spec: GridSpec
    labels: np.ndarray = field(repr=False)
    num_classes: int = 4

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.spec.shape:
            raise DataError(f"labels shape {labels.shape} != grid shape {self.spec.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in 0..{self.num_classes - 1}")
        labels = labels.astype(np.int64)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def drivable(self, taxonomy: ClassTaxonomy) -> np.ndarray:
        return taxonomy.drivable_indicator()[self.labels]


def project_to_grid(points, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ego-frame meters ``(..., 2)`` to continuous pixel coordinates.

    Returns ``(rc, in_bounds)``.  Out-of-bounds points are flagged, not
    rejected.
    """
    pts = np.asarray(points, dtype=float)
    rc = np.empty_like(pts)
    rc[..., 0] = (pts[..., 0] - spec.origin[0]) / spec.resolution
    rc[..., 1] = (pts[..., 1] - spec.origin[1]) / spec.resolution
    return rc, spec.in_bounds(rc)


def pixel_to_world(rc, spec: GridSpec) -> np.ndarray:
    rc = np.asarray(rc, dtype=float)
    out = np.empty_like(rc)
    out[..., 0] = rc[..., 0] * spec.resolution + spec.origin[0]
    out[..., 1] = rc[..., 1] * spec.resolution + spec.origin[1]
    return out


def pixel_index(rc, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel containing each continuous coordinate (nearest-pixel lookup).

    Indices are clipped into the grid; check ``spec.in_bounds`` separately.
    """
    rc = np.asarray(rc, dtype=float)
    r = np.clip(np.floor(rc[..., 0]).astype(np.int64), 0, spec.height - 1)
    c = np.clip(np.floor(rc[..., 1]).astype(np.int64), 0, spec.width - 1)
    return r, c


# -- serialization ---------------------------------------------------------

def write_semantic_grid(path, grid: SemanticGrid) -> None:
    h, w = grid.spec.shape
    if grid.num_classes > 256:
        raise DataError("u8 encoding holds at most 256 classes")
    header = BEVG_MAGIC + struct.pack("<III", h, w, grid.num_classes)
    Path(path).write_bytes(header + grid.labels.astype(np.uint8).tobytes(order="C"))


def read_semantic_grid(path, spec: GridSpec | None = None) -> SemanticGrid:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != BEVG_MAGIC:
        raise DataError(f"{path}: not a BEVG file")
    h, w, k = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != h * w:
        raise DataError(f"{path}: expected {h * w} label bytes, found {len(body)}")
    labels = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    if spec is None:
        spec = GridSpec(height=h, width=w)
    elif spec.shape != (h, w):
        raise DataError(f"{path}: grid {h}x{w} does not match spec {spec.shape}")
    return SemanticGrid(spec, labels, num_classes=k)


def load_grid_csv(path, spec: GridSpec | None = None, num_classes: int = 4) -> SemanticGrid:
    """Plain-text fixture: one grid row per line, comma-separated class indices."""
    labels = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    if spec is None:
        spec = GridSpec(height=labels.shape[0], width=labels.shape[1], resolution=1.0, origin=(0.0, 0.0))
    return SemanticGrid(spec, labels, num_classes=num_classes)
