"""Candidate trajectory scoring against a drivable score map, and planning losses."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bev_core import DataError, GridSpec, pixel_index, project_to_grid
from .report import LossReport, check_weights
from .uncertainty import DrivableScoreMap

DEFAULT_BETA = 4.0
DEFAULT_MARGIN = 0.1


class NoSafePlanError(RuntimeError):
    """Every candidate was discarded."""


@dataclass(frozen=True)
class Trajectory:
    """Waypoints ``(T, 2)`` in ego-frame meters at fixed spacing ``dt`` from ``t0``.

    ``intent`` optionally carries a per-point lane-following mask (binary or
    soft in [0, 1]).
    """

    points: np.ndarray = field(repr=False)
    dt: float = 0.5
    t0: float = 0.0
    intent: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise DataError(f"trajectory needs at least 2 points, got {len(pts)}")
        if not self.dt > 0:
            raise DataError("timestamps must be strictly increasing (dt > 0)")
        if not np.all(np.isfinite(pts)):
            raise DataError("trajectory contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.intent is not None:
            m = np.array(self.intent, dtype=np.float64).reshape(-1)
            if len(m) != len(pts):
                raise DataError(f"intent length {len(m)} != trajectory length {len(pts)}")
            if np.any((m < 0) | (m > 1)):
                raise DataError("intent values must lie in [0, 1]")
            m.flags.writeable = False
            object.__setattr__(self, "intent", m)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.points))

    def with_points(self, points) -> "Trajectory":
        return replace(self, points=points)

    def resample(self, timestamps) -> "Trajectory":
        """Linear interpolation in time onto new (uniformly spaced) timestamps."""
        ts = np.asarray(timestamps, dtype=float)
        pts = np.stack([np.interp(ts, self.timestamps, self.points[:, i]) for i in range(2)], axis=-1)
        intent = None if self.intent is None else np.interp(ts, self.timestamps, self.intent)
        dt = float(ts[1] - ts[0]) if len(ts) > 1 else self.dt
        return Trajectory(pts, dt=dt, t0=float(ts[0]), intent=intent)


def aligned(expert: Trajectory, like: Trajectory) -> Trajectory:
    if len(expert) == len(like) and expert.dt == like.dt and expert.t0 == like.t0:
        return expert
    return expert.resample(like.timestamps)


def mean_l2(a: Trajectory, b: Trajectory) -> float:
    b = aligned(b, a)
    return float(np.linalg.norm(a.points - b.points, axis=1).mean())


@dataclass(frozen=True)
class CandidateSet:
    candidates: list[Trajectory]
    prior_weights: np.ndarray
    min_safety: np.ndarray | None = None
    discarded: np.ndarray | None = None
    score_logits: np.ndarray | None = None
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        n = len(self.candidates)
        if n < 1:
            raise DataError("candidate set is empty")
        pw = np.array(self.prior_weights, dtype=float)
        if pw.shape != (n,) or np.any(pw < 0) or not math.isclose(pw.sum(), 1.0, abs_tol=1e-9):
            raise DataError("prior weights must be n nonnegative values summing to 1")
        object.__setattr__(self, "prior_weights", pw)
        for name in ("min_safety", "score_logits"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.array(v, dtype=float))
        disc = np.zeros(n, dtype=bool) if self.discarded is None else np.array(self.discarded, dtype=bool)
        object.__setattr__(self, "discarded", disc)

    @classmethod
    def uniform(cls, candidates) -> "CandidateSet":
        n = len(candidates)
        return cls(list(candidates), np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def logits(self) -> np.ndarray:
        """Pre-normalization weighting logits ``log prior + beta * min_safety``."""
        if self.score_logits is not None:
            return self.score_logits
        with np.errstate(divide="ignore"):
            lp = np.log(self.prior_weights)
        if self.min_safety is None:
            return lp
        return lp + self.beta * self.min_safety

    @property
    def no_safe_plan(self) -> bool:
        return bool(np.all(self.discarded)) or not np.any(np.isfinite(self.logits[~self.discarded]))

    @property
    def posterior_weights(self) -> np.ndarray:
        out = np.zeros(len(self))
        if self.no_safe_plan:
            return out
        live = ~self.discarded
        z = self.logits[live]
        w = np.exp(z - z.max())
        out[live] = w / w.sum()
        return out

    def with_logits(self, logits) -> "CandidateSet":
        return replace(self, score_logits=np.asarray(logits, dtype=float))

    def to_dict(self) -> dict:
        post = self.posterior_weights
        ms = self.min_safety if self.min_safety is not None else np.full(len(self), np.nan)
        return {
            "no_safe_plan": self.no_safe_plan,
            "beta": self.beta,
            "candidates": [
                {
                    "index": i,
                    "min_safety": float(ms[i]),
                    "prior_weight": float(self.prior_weights[i]),
                    "posterior_weight": float(post[i]),
                    "discarded": bool(self.discarded[i]),
                }
                for i in range(len(self))
            ],
        }


@dataclass(frozen=True)
class ScoredPlan:
    chosen_index: int
    score: float
    per_candidate_scores: list[float]


# -- path sampling ---------------------------------------------------------

def rasterize_path(traj: Trajectory, spec: GridSpec, step: float | None = None):
    """Resample the polyline at <= ``step`` meter spacing.

    Returns ``(rc, in_bounds)`` with continuous pixel coordinates.  Every
    waypoint is kept; each segment is split into equal sub-steps.
    """
    if step is None:
        step = spec.resolution / 2
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    pts = traj.points
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil(np.linalg.norm(b - a) / step - 1e-9))
        s = np.arange(1, n + 1)[:, None] / n
        out.append(a + s * (b - a))
    world = np.concatenate(out)
    return project_to_grid(world, spec)


def bilinear(values: np.ndarray, rc: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of pixel-center values, edge-clamped."""
    h, w = values.shape
    rc = np.asarray(rc, dtype=float)
    x = np.clip(rc[..., 0] - 0.5, 0.0, h - 1)
    y = np.clip(rc[..., 1] - 0.5, 0.0, w - 1)
    i0 = np.minimum(np.floor(x).astype(np.int64), max(h - 2, 0))
    j0 = np.minimum(np.floor(y).astype(np.int64), max(w - 2, 0))
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fx = x - i0
    fy = y - j0
    return (
        (1 - fx) * (1 - fy) * values[i0, j0] + (1 - fx) * fy * values[i0, j1]
        + fx * (1 - fy) * values[i1, j0] + fx * fy * values[i1, j1]
    )


def _crossings(a: float, b: float, offset: float) -> np.ndarray:
    """Parameters in (0, 1) where ``a + s (b - a) - offset`` hits an integer."""
    if a == b:
        return np.empty(0)
    lo, hi = sorted((a - offset, b - offset))
    ks = np.arange(math.floor(lo) + 1, math.ceil(hi))
    return (ks + offset - a) / (b - a)


def _path_pieces(rc: np.ndarray) -> np.ndarray:
    """Parameter breakpoints along each segment where the bilinear cell or the
    containing pixel changes.  Returns a sorted list of points (M, 2)."""
    pts = [rc[:1]]
    for a, b in zip(rc[:-1], rc[1:]):
        s = np.concatenate([
            _crossings(a[0], b[0], 0.5), _crossings(a[1], b[1], 0.5),
            _crossings(a[0], b[0], 0.0), _crossings(a[1], b[1], 0.0),
            [1.0],
        ])
        s = np.unique(s[(s > 0) & (s <= 1)])
        pts.append(a + s[:, None] * (b - a))
    return np.concatenate(pts)


def path_minimum(traj: Trajectory, values: np.ndarray, spec: GridSpec, step: float | None = None):
    """Exact minimum of the bilinear interpolant of ``values`` along the path.

    The rasterized samples are refined with every cell crossing; between
    crossings the interpolant is quadratic in the path parameter, so interior
    minima are found analytically.  Returns ``(minimum, rc_at_minimum, probes)``
    where ``probes`` visits every pixel the path traverses.
    """
    rc, _ = rasterize_path(traj, spec, step)
    pts = _path_pieces(rc)
    vals = bilinear(values, pts)
    a, b = pts[:-1], pts[1:]
    mid = 0.5 * (a + b)
    f0, f1, fm = vals[:-1], vals[1:], bilinear(values, mid)
    c = 2.0 * (f0 - 2.0 * fm + f1)
    lin = f1 - f0 - c
    with np.errstate(divide="ignore", invalid="ignore"):
        sv = np.where(c > 1e-15, -lin / (2.0 * c), -1.0)
    inside = (sv > 0) & (sv < 1)
    cand = np.concatenate([pts, a[inside] + sv[inside, None] * (b[inside] - a[inside])])
    cvals = np.concatenate([vals, bilinear(values, cand[len(pts):])])
    i = int(np.argmin(cvals))
    return float(cvals[i]), cand[i], np.concatenate([pts, mid])


def min_safety(traj: Trajectory, smap: DrivableScoreMap, step: float | None = None):
    """Minimum bilinear ``s_safe`` along the path and the discard flag.

    A path is discarded if any point is out of bounds or lies in a pixel
    flagged non-drivable (nearest-pixel lookup over every traversed pixel).
    """
    spec = smap.spec
    score, _, probes = path_minimum(traj, smap.s_safe, spec, step)
    oob = ~spec.in_bounds(probes)
    r, cc = pixel_index(probes, spec)
    discard = bool(oob.any() or smap.nondrivable_mask[r, cc].any())
    return float(np.clip(score, 0.0, 1.0)), discard


def score_candidates(cset: CandidateSet, smap: DrivableScoreMap, step: float | None = None):
    res = [min_safety(c, smap, step) for c in cset.candidates]
    return np.array([r[0] for r in res]), np.array([r[1] for r in res], dtype=bool)


def weight_candidates(
    cset: CandidateSet, smap: DrivableScoreMap, beta: float = DEFAULT_BETA, step: float | None = None
) -> CandidateSet:
    """Score every candidate, discard non-drivable ones, tilt priors by ``exp(beta * min_safety)``."""
    ms, disc = score_candidates(cset, smap, step)
    return replace(cset, min_safety=ms, discarded=disc, beta=float(beta), score_logits=None)


def select_plan(cset: CandidateSet) -> ScoredPlan:
    if cset.no_safe_plan:
        raise NoSafePlanError("all candidates discarded")
    post = cset.posterior_weights
    idx = int(np.argmax(post))  # first maximum wins ties
    return ScoredPlan(idx, float(post[idx]), post.tolist())


# -- planning losses -------------------------------------------------------

def expert_distances(cset: CandidateSet, expert: Trajectory) -> np.ndarray:
    return np.array([mean_l2(c, expert) for c in cset.candidates])


def expert_target(cset: CandidateSet, expert: Trajectory) -> int:
    """Index of the candidate nearest the expert (mean pointwise L2), among
    surviving candidates when any survive."""
    d = expert_distances(cset, expert)
    if not np.all(cset.discarded):
        d = np.where(cset.discarded, np.inf, d)
    return int(np.argmin(d))


def classification_loss(cset: CandidateSet, expert: Trajectory):
    """Cross-entropy of the posterior against the expert-consistent candidate.

    Returns ``(loss, grad)`` with ``grad`` w.r.t. the weighting logits.
    """
    z = cset.logits
    live = ~cset.discarded if not np.all(cset.discarded) else np.ones(len(z), dtype=bool)
    target = expert_target(cset, expert)
    zl = z[live]
    m = zl.max()
    lse = m + np.log(np.exp(zl - m).sum())
    p = np.zeros(len(z))
    p[live] = np.exp(zl - lse)
    loss = float(lse - z[target])
    grad = p.copy()
    grad[target] -= 1.0
    return max(loss, 0.0), grad


def trajectory_loss(chosen: Trajectory, expert: Trajectory):
    """Mean over points of ``|dx| + |dy|``; returns ``(loss, grad wrt chosen points)``."""
    diff = chosen.points - aligned(expert, chosen).points
    n = len(diff)
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def ranking_loss(cset: CandidateSet, expert: Trajectory, margin: float = DEFAULT_MARGIN):
    """Mean pairwise hinge ``max(0, m - (s_i - s_j))`` over pairs where i is
    strictly closer to the expert than j.  Returns ``(loss, grad wrt logits)``."""
    s = cset.logits
    d = expert_distances(cset, expert)
    ok = np.isfinite(s)
    closer = (d[:, None] < d[None, :]) & ok[:, None] & ok[None, :]
    grad = np.zeros(len(s))
    npairs = int(closer.sum())
    if npairs == 0:
        return 0.0, grad
    with np.errstate(invalid="ignore"):
        gap = margin - (s[:, None] - s[None, :])
    active = closer & (gap > 0)
    loss = float(np.where(active, gap, 0.0).sum() / npairs)
    grad -= active.sum(axis=1) / npairs
    grad += active.sum(axis=0) / npairs
    return loss, grad


def chosen_candidate(cset: CandidateSet) -> int:
    if cset.no_safe_plan:
        return int(np.argmax(np.where(np.isfinite(cset.logits), cset.logits, -np.inf)))
    return select_plan(cset).chosen_index


def planning_loss(
    cset: CandidateSet,
    expert: Trajectory,
    lam_cls: float = 1.0,
    lam_traj: float = 1.0,
    lam_rank: float = 1.0,
    margin: float = DEFAULT_MARGIN,
    prediction: Trajectory | None = None,
) -> LossReport:
    """Classification, trajectory and ranking terms.  The trajectory term
    compares ``prediction`` (default: the selected candidate) to the expert."""
    w = check_weights(cls=lam_cls, traj=lam_traj, rank=lam_rank)
    l_cls, g_cls = classification_loss(cset, expert)
    if prediction is None:
        prediction = cset.candidates[chosen_candidate(cset)]
    l_traj, g_traj = trajectory_loss(prediction, expert)
    l_rank, g_rank = ranking_loss(cset, expert, margin)
    return LossReport(
        "planning",
        components={"cls": l_cls, "traj": l_traj, "rank": l_rank},
        weights=w,
        gradients={"cls/logits": g_cls, "traj/chosen_points": g_traj, "rank/logits": g_rank},
    )


# -- file formats ----------------------------------------------------------

def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    header = ["t", "x", "y"] + (["intent"] if traj.intent is not None else [])
    wr.writerow(header)
    for i, (t, (x, y)) in enumerate(zip(traj.timestamps, traj.points)):
        row = [f"{t:.6f}", f"{x:.6f}", f"{y:.6f}"]
        if traj.intent is not None:
            row.append(f"{traj.intent[i]:.6f}")
        wr.writerow(row)
    return buf.getvalue()


def write_trajectory(path, traj: Trajectory) -> None:
    Path(path).write_text(trajectory_to_csv(traj))


def read_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"t", "x", "y"} <= set(rows[0]):
        raise DataError(f"{path}: expected CSV header t,x,y")
    t = np.array([float(r["t"]) for r in rows])
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows])
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise DataError(f"{path}: timestamps must be strictly increasing")
    intent = np.array([float(r["intent"]) for r in rows]) if "intent" in rows[0] else None
    dt = float(np.round(np.diff(t).mean(), 6))
    return Trajectory(pts, dt=dt, t0=float(t[0]), intent=intent)


def write_candidate_report(path, cset: CandidateSet, plan: ScoredPlan | None = None, extra=None) -> None:
    doc = cset.to_dict()
    doc["chosen_index"] = None if plan is None else plan.chosen_index
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
