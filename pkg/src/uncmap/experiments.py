"""Scene pipelines, desk-scale compliance metrics and paired ablation sweeps.

``dac_like`` is the fraction of rasterized path samples that land on
truth-drivable pixels; ``lk_like`` is the fraction of intent-active points
within ``d_follow`` of a truth centerline pixel.  Both are stand-ins for the
benchmark sub-scores of the same flavor, computed on synthetic scenes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .bev_core import ClassTaxonomy, GridSpec, SemanticGrid, pixel_index, project_to_grid
from .lane_reg import (
    DEFAULT_D_FOLLOW,
    CenterlineField,
    active_points,
    lane_loss,
    match_nearest,
    soft_intent,
)
from .losses import expected_calibration_error
from .planner import (
    DEFAULT_BETA,
    CandidateSet,
    Trajectory,
    bilinear,
    path_minimum,
    rasterize_path,
    select_plan,
    weight_candidates,
)
from .scenegen import AmbiguityRegion, ScenarioSpec, generate_candidates, generate_expert, generate_scene
from .uncertainty import DEFAULT_TAU_DRIVE, DrivableScoreMap, LogitField, McConfig, build_score_map


def dac_like(traj: Trajectory, truth: SemanticGrid, taxonomy: ClassTaxonomy, step: float | None = None) -> float:
    rc, ok = rasterize_path(traj, truth.spec, step)
    r, c = pixel_index(rc, truth.spec)
    on_road = truth.drivable(taxonomy)[r, c] & ok
    return float(on_road.mean())


def lk_like(
    traj: Trajectory,
    expert: Trajectory,
    truth: SemanticGrid,
    taxonomy: ClassTaxonomy,
    d_follow: float = DEFAULT_D_FOLLOW,
    field: CenterlineField | None = None,
) -> float:
    """Returns 1.0 when no point is intent-active (nothing to keep)."""
    field = field or CenterlineField(truth, taxonomy)
    act = active_points(expert.intent, match_nearest(traj, expert))
    if not act.any():
        return 1.0
    if field.empty:
        return 0.0
    rc, _ = project_to_grid(traj.points[act], truth.spec)
    d, _ = field.nearest(rc)
    return float(np.mean(d * truth.spec.resolution <= d_follow))


def path_uncertainty(traj: Trajectory, smap: DrivableScoreMap, step: float | None = None) -> dict:
    """Group entropy where the path's safety score bottoms out, plus the path maximum."""
    _, rc_min, probes = path_minimum(traj, smap.s_safe, smap.spec, step)
    h_at_min = float(bilinear(smap.h_group, rc_min))
    h_max = float(bilinear(smap.h_group, probes).max())
    return {"h_at_min_safety": h_at_min, "h_max": h_max}


@dataclass
class Scene:
    spec: ScenarioSpec
    truth: SemanticGrid
    smap: DrivableScoreMap
    expert: Trajectory
    cset: CandidateSet
    field: CenterlineField = None
    logits: LogitField = None


def build_scene(
    spec: ScenarioSpec,
    grid: GridSpec = GridSpec(),
    taxonomy: ClassTaxonomy = ClassTaxonomy(),
    mc: McConfig | None = None,
    tau_drive: float = DEFAULT_TAU_DRIVE,
    d_follow: float = DEFAULT_D_FOLLOW,
    include_expert: bool = True,
) -> Scene:
    mc = mc or McConfig(seed=spec.seed)
    truth, lf = generate_scene(spec, grid, taxonomy)
    smap = build_score_map(lf, taxonomy, mc, tau_drive)
    expert = generate_expert(spec, grid, taxonomy, d_follow)
    cset = generate_candidates(spec, expert, include_expert=include_expert)
    return Scene(spec, truth, smap, expert, cset, CenterlineField(truth, taxonomy), lf)


def plan_scene(
    scene: Scene,
    uncertainty: bool = True,
    lane_reg: bool = False,
    beta: float = DEFAULT_BETA,
    lane_weight: float = 1.0,
    taxonomy: ClassTaxonomy = ClassTaxonomy(),
    d_follow: float = DEFAULT_D_FOLLOW,
) -> dict:
    """Weight and select a plan; returns the chosen index and the weighted set.

    With ``uncertainty`` off the map's group entropy is zeroed (``s_safe =
    p_pos``).  With ``lane_reg`` on, the selection score is the log posterior
    minus ``lane_weight`` times each candidate's lane loss against the expert
    intent mask.
    """
    smap = scene.smap if uncertainty else scene.smap.without_uncertainty()
    wset = weight_candidates(scene.cset, smap, beta)
    if wset.no_safe_plan:
        return {"chosen_index": None, "set": wset, "no_safe_plan": True}
    if not lane_reg:
        return {"chosen_index": select_plan(wset).chosen_index, "set": wset, "no_safe_plan": False}
    post = wset.posterior_weights
    with np.errstate(divide="ignore"):
        score = np.log(post)
    for i, cand in enumerate(wset.candidates):
        if wset.discarded[i]:
            continue
        rep = lane_loss(cand, scene.expert, soft_intent(cand, scene.field, d_follow), scene.expert.intent,
                        scene.truth, taxonomy, field=scene.field)
        score[i] -= lane_weight * rep.total
    idx = int(np.argmax(score))
    return {"chosen_index": idx, "set": wset, "no_safe_plan": False}


def scene_metrics(scene: Scene, chosen: int | None, taxonomy: ClassTaxonomy = ClassTaxonomy(),
                  d_follow: float = DEFAULT_D_FOLLOW, wset: CandidateSet | None = None,
                  smap: DrivableScoreMap | None = None) -> dict:
    """Compliance metrics of the chosen candidate.  ``ece`` is read from
    ``smap`` (the map the arm planned on, default the scene's); the entropy
    along the path always comes from the scene's full-uncertainty map."""
    ece = expected_calibration_error(smap or scene.smap, scene.truth.drivable(taxonomy)).ece
    if chosen is None:
        return {"chosen_index": None, "no_safe_plan": True, "dac_like": None, "lk_like": None,
                "min_safety": None, "h_at_min_safety": None, "h_max": None, "ece": ece}
    traj = scene.cset.candidates[chosen]
    unc = path_uncertainty(traj, scene.smap)
    ms = None if wset is None or wset.min_safety is None else float(wset.min_safety[chosen])
    return {
        "chosen_index": int(chosen),
        "no_safe_plan": False,
        "dac_like": dac_like(traj, scene.truth, taxonomy),
        "lk_like": lk_like(traj, scene.expert, scene.truth, taxonomy, d_follow, scene.field),
        "min_safety": ms,
        **unc,
        "ece": ece,
    }


def sign_test(on, off) -> dict:
    """One-sided paired sign test of ``on > off`` (ties dropped)."""
    on = np.asarray(on, dtype=float)
    off = np.asarray(off, dtype=float)
    wins = int(np.sum(on > off))
    losses = int(np.sum(on < off))
    n = wins + losses
    p = 1.0 if n == 0 else float(binomtest(wins, n, 0.5, alternative="greater").pvalue)
    return {"wins": wins, "losses": losses, "ties": int(len(on) - n), "p_value": p}


# -- acceptance scenario suites ---------------------------------------------

def shoulder_strip(side: int, edge: float, x_range=(10.0, 40.0), radius: float = 2.5,
                   spacing: float = 2.0, inset: float = 1.5, **kw) -> tuple[AmbiguityRegion, ...]:
    """Chain of ambiguity disks lining a road edge at lateral position ``edge``.

    ``side`` is +1 for a left shoulder, -1 for a right one.  Disk centers sit
    ``inset`` meters beyond the edge, so the chain covers the edge itself.
    """
    xs = np.arange(x_range[0], x_range[1] + 1e-9, spacing)
    y = edge + side * inset
    return tuple(AmbiguityRegion(center=(float(x), y), radius=radius, **kw) for x in xs)


def ambiguity_suite_spec(seed: int, prior_spread: float = 0.5, prior_lean: float = 1.0,
                         confusion: float = 0.7, sigma_boost: float = 1.0) -> ScenarioSpec:
    """Fork / lane-change scene whose road shoulder is poorly observed:
    perception hallucinates road there (``confusion``) and is unsure about
    it (``sigma_boost``).  Candidates drifting onto the shoulder are not
    discarded, so only the weighting can keep them from being chosen.  The
    policy prior is uncertainty-blind: seeded noise plus a lean toward the
    shoulder side, as a policy fed the same corrupted perception would have."""
    template = ("fork", "lane-change")[seed % 2]
    w = 3.5
    if template == "fork":
        side, edge = -1, -w / 2
    else:
        side, edge = +1, 1.5 * w
    strip = shoulder_strip(side, edge, confusion=confusion, sigma_boost=sigma_boost)
    return ScenarioSpec(
        seed=seed, template=template, lane_width=w, ambiguity=strip, num_candidates=8,
        noise_level=0.3, offset_scale=5.0, prior_spread=prior_spread, prior_lean=side * prior_lean,
    )


def lane_suite_spec(seed: int) -> ScenarioSpec:
    """Scenes whose candidates drift laterally inside the drivable corridor."""
    template = ("straight", "curve", "lane-change", "fork")[seed % 4]
    return ScenarioSpec(
        seed=seed, template=template, num_candidates=8, noise_level=0.3,
        offset_scale=1.6, prior_spread=1.0,
    )


@dataclass
class PairedResult:
    per_scene: list[dict] = field(default_factory=list)

    def column(self, arm: str, key: str) -> np.ndarray:
        return np.array([np.nan if s[arm][key] is None else s[arm][key] for s in self.per_scene], dtype=float)


def run_uncertainty_ablation(seeds, grid: GridSpec = GridSpec(), taxonomy: ClassTaxonomy = ClassTaxonomy(),
                             beta: float = DEFAULT_BETA, spec_fn=ambiguity_suite_spec, map_samples: int = 128):
    res = PairedResult()
    for seed in seeds:
        spec = spec_fn(seed)
        scene = build_scene(spec, grid, taxonomy, McConfig(map_samples, seed))
        row = {"seed": int(seed), "template": spec.template}
        for arm, flag in (("on", True), ("off", False)):
            out = plan_scene(scene, uncertainty=flag, beta=beta, taxonomy=taxonomy)
            smap = scene.smap if flag else scene.smap.without_uncertainty()
            row[arm] = scene_metrics(scene, out["chosen_index"], taxonomy, wset=out["set"], smap=smap)
        res.per_scene.append(row)
    return res


def run_lane_ablation(seeds, grid: GridSpec = GridSpec(), taxonomy: ClassTaxonomy = ClassTaxonomy(),
                      beta: float = DEFAULT_BETA, lane_weight: float = 1.0, spec_fn=lane_suite_spec,
                      map_samples: int = 128):
    res = PairedResult()
    for seed in seeds:
        spec = spec_fn(seed)
        scene = build_scene(spec, grid, taxonomy, McConfig(map_samples, seed), include_expert=False)
        row = {"seed": int(seed), "template": spec.template}
        for arm, flag in (("on", True), ("off", False)):
            out = plan_scene(scene, lane_reg=flag, beta=beta, lane_weight=lane_weight, taxonomy=taxonomy)
            row[arm] = scene_metrics(scene, out["chosen_index"], taxonomy, wset=out["set"])
        res.per_scene.append(row)
    return res
