"""Deterministic synthetic BEV scenes, expert trajectories and candidate sets.

Scenes stand in for a learned perception stack: the ground-truth semantic
grid is painted from a road template, and the logit field puts a margin on
the true class, adds seeded noise, and raises log-sigma inside ambiguity
regions.  Every output is a pure function of ``(ScenarioSpec, GridSpec,
ClassTaxonomy)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .bev_core import ClassTaxonomy, ConfigurationError, GridSpec, SemanticGrid, pixel_to_world, project_to_grid
from .lane_reg import DEFAULT_D_FOLLOW, CenterlineField, build_gt_intent_mask
from .planner import CandidateSet, Trajectory
from .rng import scene_rng
from .uncertainty import LogitField

TEMPLATES = ("straight", "curve", "fork", "lane-change")

_POLY_STEP = 0.05  # meters between dense polyline vertices
_X_RANGE = (-20.0, 80.0)


@dataclass(frozen=True)
class AmbiguityRegion:
    """Disk where perception is unsure.

    ``sigma_boost`` is added to log-sigma.  ``confusion`` in [0, 1] blends
    the mean logits toward the road class (a hallucinated road surface);
    0 leaves the mean untouched.  Where regions overlap, a pixel takes the
    largest boost and the largest confusion among them.
    """

    center: tuple[float, float]
    radius: float
    sigma_boost: float = 2.0
    confusion: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not self.radius > 0:
            raise ConfigurationError(f"ambiguity radius must be positive, got {self.radius}")
        if not 0 <= self.confusion <= 1:
            raise ConfigurationError(f"confusion must lie in [0, 1], got {self.confusion}")


@dataclass(frozen=True)
class AgentBox:
    """Static axis-aligned rectangle (ego frame, meters) painted as obstacle."""

    center: tuple[float, float]
    length: float = 4.5
    width: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.length <= 0 or self.width <= 0:
            raise ConfigurationError("agent box dimensions must be positive")


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    template: str = "straight"
    lane_width: float = 3.5
    ambiguity: tuple[AmbiguityRegion, ...] = ()
    agents: tuple[AgentBox, ...] = ()
    num_candidates: int = 6
    noise_level: float = 0.0
    logit_margin: float = 6.0
    base_log_sigma: float = -2.0
    speed: float = 8.0
    num_points: int = 9
    dt: float = 0.5
    offset_scale: float = 3.0
    violating: bool = False
    prior_spread: float = 0.0
    prior_lean: float = 0.0  # policy preference per unit of left offset (log-prior units)
    branch: str = "straight"  # fork template: which branch the expert takes

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ConfigurationError(f"unknown template {self.template!r}; choose from {TEMPLATES}")
        if not self.lane_width > 0:
            raise ConfigurationError("lane width must be positive")
        if self.num_candidates < 1:
            raise ConfigurationError("need at least one candidate")
        if self.num_points < 2 or not self.dt > 0 or not self.speed > 0:
            raise ConfigurationError("trajectory needs >= 2 points, positive dt and speed")
        if self.noise_level < 0 or self.offset_scale < 0 or self.prior_spread < 0:
            raise ConfigurationError("noise_level, offset_scale and prior_spread must be >= 0")
        if self.branch not in ("straight", "left"):
            raise ConfigurationError(f"unknown fork branch {self.branch!r}")
        object.__setattr__(self, "ambiguity", tuple(
            a if isinstance(a, AmbiguityRegion) else AmbiguityRegion(**a) for a in self.ambiguity))
        object.__setattr__(self, "agents", tuple(
            a if isinstance(a, AgentBox) else AgentBox(**a) for a in self.agents))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ambiguity"] = [asdict(a) for a in self.ambiguity]
        d["agents"] = [asdict(a) for a in self.agents]
        for group in ("ambiguity", "agents"):
            for a in d[group]:
                a["center"] = list(a["center"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "ScenarioSpec":
        return ScenarioSpec(**{**asdict(self), "ambiguity": self.ambiguity, "agents": self.agents, **kw})


def load_scenario(path) -> ScenarioSpec:
    return ScenarioSpec.from_dict(json.loads(Path(path).read_text()))


def save_scenario(path, spec: ScenarioSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


# -- road geometry ---------------------------------------------------------

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


_CURVE_K = 0.006      # curve template: y = k x^2 beyond x = 0
_FORK_X = 8.0         # fork template: branch point
_FORK_B = 0.025       # fork template: left branch y = b (x - x_f)^2
_LC_SPAN = (8.0, 24.0)


def _polyline(fn) -> np.ndarray:
    x = np.arange(_X_RANGE[0], _X_RANGE[1] + _POLY_STEP / 2, _POLY_STEP)
    return np.stack([x, fn(x)], axis=-1)


def _offset_polyline(poly: np.ndarray, d: float) -> np.ndarray:
    """Parallel curve shifted ``d`` meters along the left normal."""
    tang = np.gradient(poly, axis=0)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    normal = np.stack([-tang[:, 1], tang[:, 0]], axis=-1)
    return poly + d * normal


def lane_centerlines(spec: ScenarioSpec) -> list[np.ndarray]:
    """Dense lane-center polylines for the template; the first is the ego lane."""
    w = spec.lane_width
    if spec.template == "straight":
        base = _polyline(np.zeros_like)
        return [base, _offset_polyline(base, w)]
    if spec.template == "curve":
        base = _polyline(lambda x: _CURVE_K * np.maximum(x, 0.0) ** 2)
        return [base, _offset_polyline(base, w)]
    if spec.template == "fork":
        straight = _polyline(np.zeros_like)
        left = _polyline(lambda x: _FORK_B * np.maximum(x - _FORK_X, 0.0) ** 2)
        return [straight, left]
    # lane-change: two parallel straight lanes
    base = _polyline(np.zeros_like)
    return [base, base + np.array([0.0, w])]


def expert_path(spec: ScenarioSpec) -> np.ndarray:
    """Dense polyline the expert drives along."""
    lanes = lane_centerlines(spec)
    if spec.template == "fork" and spec.branch == "left":
        return lanes[1]
    if spec.template == "lane-change":
        x0, x1 = _LC_SPAN
        return _polyline(lambda x: spec.lane_width * _smoothstep((x - x0) / (x1 - x0)))
    return lanes[0]


def _walk(poly: np.ndarray, start_xy, distances) -> np.ndarray:
    """Points at the given arc lengths along ``poly`` measured from the vertex nearest ``start_xy``."""
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    i0 = int(np.argmin(np.linalg.norm(poly - np.asarray(start_xy), axis=1)))
    target = s[i0] + np.asarray(distances, dtype=float)
    return np.stack([np.interp(target, s, poly[:, k]) for k in range(2)], axis=-1)


def _paint_truth(spec: ScenarioSpec, grid: GridSpec, taxonomy: ClassTaxonomy) -> np.ndarray:
    centers = pixel_to_world(grid.pixel_centers(), grid).reshape(-1, 2)
    lanes = lane_centerlines(spec)
    tree = cKDTree(np.concatenate(lanes))
    d, _ = tree.query(centers)
    labels = np.full(grid.shape, taxonomy.offroad_class, dtype=np.int64)
    labels.reshape(-1)[d <= spec.lane_width / 2] = taxonomy.road_class

    for poly in lanes:
        rc, ok = project_to_grid(poly, grid)
        r = np.floor(rc[ok, 0]).astype(np.int64)
        c = np.floor(rc[ok, 1]).astype(np.int64)
        labels[r, c] = taxonomy.centerline_class

    if spec.agents:
        flat = labels.reshape(-1)
        for box in spec.agents:
            inside = (
                (np.abs(centers[:, 0] - box.center[0]) <= box.length / 2)
                & (np.abs(centers[:, 1] - box.center[1]) <= box.width / 2)
            )
            flat[inside] = taxonomy.obstacle_class
    return labels


def _check_fits(spec: ScenarioSpec, grid: GridSpec, pts: np.ndarray) -> None:
    margin = spec.lane_width / 2
    lo = np.asarray(grid.origin)
    hi = lo + grid.resolution * np.array(grid.shape)
    if np.any(pts - margin < lo) or np.any(pts + margin >= hi):
        raise ConfigurationError(
            f"{spec.template} corridor along the planning horizon does not fit the "
            f"{grid.height}x{grid.width} grid at {grid.resolution} m/px"
        )


def generate_scene(spec: ScenarioSpec, grid: GridSpec = GridSpec(), taxonomy: ClassTaxonomy = ClassTaxonomy()):
    """Return ``(truth SemanticGrid, LogitField)``."""
    expert_pts = _expert_points(spec)
    _check_fits(spec, grid, expert_pts)
    labels = _paint_truth(spec, grid, taxonomy)
    truth = SemanticGrid(grid, labels, num_classes=taxonomy.num_classes)

    k = taxonomy.num_classes
    m = spec.logit_margin
    mu = m * np.eye(k)[labels]
    if spec.noise_level > 0:
        mu = mu + spec.noise_level * scene_rng(spec.seed, 1).standard_normal(mu.shape)
    log_sigma = np.full(mu.shape, spec.base_log_sigma)
    if spec.ambiguity:
        # overlapping regions do not stack: each pixel takes the strongest one
        centers = pixel_to_world(grid.pixel_centers(), grid)
        boost = np.zeros(grid.shape)
        confusion = np.zeros(grid.shape)
        for reg in spec.ambiguity:
            inside = np.linalg.norm(centers - np.asarray(reg.center), axis=-1) <= reg.radius
            boost[inside] = np.maximum(boost[inside], reg.sigma_boost)
            confusion[inside] = np.maximum(confusion[inside], reg.confusion)
        log_sigma += boost[..., None]
        road = m * np.eye(k)[taxonomy.road_class]
        c = confusion[..., None]
        mu = (1 - c) * mu + c * road
    return truth, LogitField(grid, mu, log_sigma)


def _expert_points(spec: ScenarioSpec) -> np.ndarray:
    dist = spec.speed * spec.dt * np.arange(spec.num_points)
    return _walk(expert_path(spec), (0.0, 0.0), dist)


def generate_expert(
    spec: ScenarioSpec,
    grid: GridSpec = GridSpec(),
    taxonomy: ClassTaxonomy = ClassTaxonomy(),
    d_follow: float = DEFAULT_D_FOLLOW,
) -> Trajectory:
    """Expert trajectory with its lane-following mask attached as ``intent``."""
    pts = _expert_points(spec)
    _check_fits(spec, grid, pts)
    traj = Trajectory(pts, dt=spec.dt)
    truth = SemanticGrid(grid, _paint_truth(spec, grid, taxonomy), num_classes=taxonomy.num_classes)
    m_gt = build_gt_intent_mask(traj, truth, taxonomy, d_follow, CenterlineField(truth, taxonomy))
    return Trajectory(pts, dt=spec.dt, intent=m_gt)


def candidate_offsets(spec: ScenarioSpec) -> np.ndarray:
    """Lateral end-point amplitudes: 0 for the expert copy, seeded for the rest.

    With ``violating`` set the last candidate swings right far enough to
    leave the road.
    """
    n = spec.num_candidates
    amps = np.zeros(n)
    if n > 1:
        amps[1:] = scene_rng(spec.seed, 2).uniform(-spec.offset_scale, spec.offset_scale, n - 1)
        if spec.violating:
            amps[-1] = -(2.0 * spec.lane_width + 2.0)
    return amps


def offset_trajectory(expert: Trajectory, amplitude: float) -> Trajectory:
    """Shift waypoints along the left normal by ``a (3 tau^2 - 2 tau^3)``, tau = t / t_end."""
    pts = expert.points
    tang = np.gradient(pts, axis=0)
    norms = np.linalg.norm(tang, axis=1, keepdims=True)
    tang = tang / np.where(norms > 0, norms, 1.0)
    normal = np.stack([-tang[:, 1], tang[:, 0]], axis=-1)
    tau = np.linspace(0.0, 1.0, len(pts))
    off = amplitude * tau * tau * (3.0 - 2.0 * tau)
    return Trajectory(pts + off[:, None] * normal, dt=expert.dt, t0=expert.t0)


def generate_candidates(spec: ScenarioSpec, expert: Trajectory, include_expert: bool = True) -> CandidateSet:
    """Expert plus cubic lateral-offset variants.  Priors are uniform unless
    ``prior_spread > 0`` (seeded log-normal policy preferences) or
    ``prior_lean != 0`` (a policy that leans sideways: each candidate's log
    prior grows by ``prior_lean * amplitude / offset_scale``).

    ``include_expert=False`` drops the exact expert copy (a policy whose
    samples never reproduce the expert), keeping the offset variants.
    """
    amps = candidate_offsets(spec)
    cands = [Trajectory(expert.points, dt=expert.dt, t0=expert.t0)]
    cands += [offset_trajectory(expert, a) for a in amps[1:]]
    if not include_expert and len(cands) > 1:
        cands = cands[1:]
        amps = amps[1:]
    n = len(cands)
    g = np.zeros(n)
    if spec.prior_spread > 0:
        g += spec.prior_spread * scene_rng(spec.seed, 3).standard_normal(n)
    if spec.prior_lean != 0 and spec.offset_scale > 0:
        g += spec.prior_lean * amps / spec.offset_scale
    w = np.exp(g - g.max())
    return CandidateSet(cands, w / w.sum())
