"""Lane-following regularization: intent masks, nearest-expert matching,
intent loss and centerline-distance loss.

Masks are plain float arrays (binary for ground truth, soft in [0, 1] for
predictions); a matching is an int array mapping each predicted point to an
expert index.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .bev_core import ClassTaxonomy, SemanticGrid, project_to_grid
from .planner import Trajectory
from .report import LossReport, check_weights

DEFAULT_D_FOLLOW = 0.5


class CenterlineField:
    """Nearest-centerline-pixel queries for a semantic grid.

    Built once per grid and shared read-only.  Distances are in pixels,
    measured to pixel centers; equidistant ties resolve to the lowest
    ``(row, col)`` pixel.
    """

    def __init__(self, grid: SemanticGrid, taxonomy: ClassTaxonomy):
        self.spec = grid.spec
        rows, cols = np.nonzero(grid.labels == taxonomy.centerline_class)
        # np.nonzero is row-major, so index order == (row, col) order
        self.centers = np.stack([rows + 0.5, cols + 0.5], axis=-1).astype(float)
        self._mask = grid.labels == taxonomy.centerline_class
        self._tree = cKDTree(self.centers) if len(self.centers) else None

    @property
    def empty(self) -> bool:
        return self._tree is None

    def nearest(self, rc) -> tuple[np.ndarray, np.ndarray]:
        """``(distance_px, nearest_center_rc)`` for continuous pixel coords ``(N, 2)``."""
        rc = np.asarray(rc, dtype=float).reshape(-1, 2)
        if self.empty:
            return np.full(len(rc), np.inf), np.full((len(rc), 2), np.nan)
        d, idx = self._tree.query(rc)
        idx = np.atleast_1d(idx).copy()
        d = np.atleast_1d(d)
        for i, (p, di) in enumerate(zip(rc, d)):
            ties = self._tree.query_ball_point(p, di * (1 + 1e-12) + 1e-12)
            if len(ties) > 1:
                idx[i] = min(ties)
        c = self.centers[idx]
        return np.linalg.norm(rc - c, axis=1), c

    def distance_raster(self) -> np.ndarray:
        """Exact Euclidean distance (pixels) from every pixel center to the
        nearest centerline pixel center; ``inf`` everywhere if there is none."""
        if self.empty:
            return np.full(self.spec.shape, np.inf)
        return distance_transform_edt(~self._mask)


def build_gt_intent_mask(
    expert: Trajectory,
    grid: SemanticGrid,
    taxonomy: ClassTaxonomy,
    d_follow: float = DEFAULT_D_FOLLOW,
    field: CenterlineField | None = None,
) -> np.ndarray:
    """1 where an expert point lies within ``d_follow`` meters of a centerline pixel center."""
    field = field or CenterlineField(grid, taxonomy)
    if field.empty:
        return np.zeros(len(expert))
    rc, _ = project_to_grid(expert.points, grid.spec)
    d, _ = field.nearest(rc)
    return (d * grid.spec.resolution <= d_follow).astype(float)


def match_nearest(pred: Trajectory, expert: Trajectory) -> np.ndarray:
    """Nearest expert index for each predicted point; ties go to the lowest index."""
    return np.argmin(cdist(pred.points, expert.points), axis=1)


def active_points(m_gt: np.ndarray, matching: np.ndarray) -> np.ndarray:
    return np.asarray(m_gt)[matching] >= 0.5


def intent_loss(m_pred, m_gt, matching):
    """``mean_t |m_pred(t) - m_gt(pi(t))|``; returns ``(loss, grad wrt m_pred)``."""
    m_pred = np.asarray(m_pred, dtype=float)
    diff = m_pred - np.asarray(m_gt, dtype=float)[matching]
    n = len(m_pred)
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def centerline_loss(
    pred: Trajectory,
    active,
    grid: SemanticGrid,
    taxonomy: ClassTaxonomy,
    field: CenterlineField | None = None,
):
    """Mean pixel distance from active projected points to the nearest
    centerline pixel.  Returns ``(loss, grad wrt pred points in meters)``;
    zero when no point is active or the grid has no centerline."""
    active = np.asarray(active, dtype=bool)
    grad = np.zeros_like(pred.points)
    n_c = int(active.sum())
    field = field or CenterlineField(grid, taxonomy)
    if n_c == 0 or field.empty:
        return 0.0, grad
    rc, _ = project_to_grid(pred.points[active], grid.spec)
    d, c = field.nearest(rc)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(d[:, None] > 0, (rc - c) / d[:, None], 0.0)
    grad[active] = unit / (n_c * grid.spec.resolution)
    return float(d.sum() / n_c), grad


def soft_intent(traj: Trajectory, field: CenterlineField, d_follow: float = DEFAULT_D_FOLLOW) -> np.ndarray:
    """Heuristic intent prediction for a candidate without an intent head:
    1 near a centerline, decaying linearly to 0 at twice ``d_follow``."""
    if traj.intent is not None:
        return traj.intent
    if field.empty:
        return np.zeros(len(traj))
    rc, _ = project_to_grid(traj.points, field.spec)
    d, _ = field.nearest(rc)
    dm = d * field.spec.resolution
    return np.clip(2.0 - dm / d_follow, 0.0, 1.0)


def lane_loss(
    pred: Trajectory,
    expert: Trajectory,
    m_pred,
    m_gt,
    grid: SemanticGrid,
    taxonomy: ClassTaxonomy,
    lam_intent: float = 1.0,
    lam_center: float = 1.0,
    field: CenterlineField | None = None,
) -> LossReport:
    w = check_weights(intent=lam_intent, center=lam_center)
    pi = match_nearest(pred, expert)
    l_int, g_int = intent_loss(m_pred, m_gt, pi)
    l_cen, g_cen = centerline_loss(pred, active_points(m_gt, pi), grid, taxonomy, field)
    return LossReport(
        "lane",
        components={"intent": l_int, "center": l_cen},
        weights=w,
        gradients={"intent/m_pred": g_int, "center/pred_points": g_cen},
    )
