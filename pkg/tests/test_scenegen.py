import numpy as np
import pytest

from uncmap.bev_core import ClassTaxonomy, ConfigurationError, GridSpec
from uncmap.lane_reg import build_gt_intent_mask
from uncmap.planner import min_safety, weight_candidates
from uncmap.scenegen import (
    TEMPLATES,
    AgentBox,
    AmbiguityRegion,
    ScenarioSpec,
    expert_path,
    generate_candidates,
    generate_expert,
    generate_scene,
    lane_centerlines,
    load_scenario,
    save_scenario,
)
from uncmap.uncertainty import McConfig, build_score_map

GRID = GridSpec()
TAX = ClassTaxonomy()


@pytest.mark.parametrize("template", TEMPLATES)
def test_clean_scene_identity(template):
    truth, lf = generate_scene(ScenarioSpec(template=template), GRID, TAX)
    assert np.array_equal(lf.mu.argmax(axis=-1), truth.labels)
    assert set(np.unique(truth.labels)) >= {0, 1, 2}


def test_scene_is_deterministic():
    spec = ScenarioSpec(seed=5, template="fork", noise_level=0.5,
                        ambiguity=(AmbiguityRegion((20.0, -3.0), 4.0),))
    a = generate_scene(spec, GRID, TAX)
    b = generate_scene(spec, GRID, TAX)
    assert a[0].labels.tobytes() == b[0].labels.tobytes()
    assert a[1].mu.tobytes() == b[1].mu.tobytes()
    assert a[1].log_sigma.tobytes() == b[1].log_sigma.tobytes()
    c = generate_scene(spec.replace(seed=6), GRID, TAX)
    assert c[1].mu.tobytes() != a[1].mu.tobytes()


def test_ambiguity_raises_entropy_inside():
    center, radius = (20.0, 0.0), 4.0
    centers = GRID.pixel_centers()
    from uncmap.bev_core import pixel_to_world
    inside = np.linalg.norm(pixel_to_world(centers, GRID) - center, axis=-1) <= radius
    wins = 0
    for seed in range(20):
        spec = ScenarioSpec(seed=seed, noise_level=0.3, ambiguity=(AmbiguityRegion(center, radius, 2.0),))
        _, lf = generate_scene(spec, GRID, TAX)
        smap = build_score_map(lf, TAX, McConfig(16, seed))
        wins += smap.h_group[inside].mean() > smap.h_group[~inside].mean()
    assert wins == 20


def test_clean_scene_fidelity_at_default_margin():
    truth, lf = generate_scene(ScenarioSpec(), GRID, TAX)
    smap = build_score_map(lf, TAX, McConfig(128, 0))
    drv = truth.drivable(TAX)
    assert smap.s_safe[drv].min() > 0.95
    assert smap.s_safe[~drv].max() < 0.05


def test_margin_four_cannot_reach_fidelity():
    # with K = 4 and m = 4 even a zero-spread pixel only reaches p_pos = 0.965,
    # which the entropy blend pulls below 0.95; the default margin is 6
    truth, lf = generate_scene(ScenarioSpec(logit_margin=4.0), GRID, TAX)
    smap = build_score_map(lf, TAX, McConfig(128, 0))
    assert smap.s_safe[truth.drivable(TAX)].max() < 0.95


def test_corridor_must_fit():
    small = GridSpec(height=32, width=32, resolution=0.5, origin=(-4.25, -8.25))
    with pytest.raises(ConfigurationError):
        generate_scene(ScenarioSpec(), small, TAX)
    with pytest.raises(ConfigurationError):
        ScenarioSpec(template="roundabout")
    with pytest.raises(ConfigurationError):
        ScenarioSpec(lane_width=0)
    with pytest.raises(ConfigurationError):
        ScenarioSpec(num_candidates=0)
    with pytest.raises(ConfigurationError):
        AmbiguityRegion((0, 0), 0.0)


def test_agent_boxes_are_obstacles():
    spec = ScenarioSpec(agents=(AgentBox((20.0, 0.0)),))
    truth, _ = generate_scene(spec, GRID, TAX)
    from uncmap.bev_core import project_to_grid, pixel_index
    r, c = pixel_index(project_to_grid([20.0, 0.0], GRID)[0], GRID)
    assert truth.labels[r, c] == TAX.obstacle_class


def test_straight_expert_on_centerline():
    spec = ScenarioSpec()
    e = generate_expert(spec, GRID, TAX)
    poly = lane_centerlines(spec)[0]
    d = np.min(np.linalg.norm(e.points[:, None, :] - poly[None], axis=-1), axis=1)
    assert d.max() < 1e-6
    assert e.intent.tolist() == [1.0] * len(e)


def test_curve_expert_follows_lane():
    e = generate_expert(ScenarioSpec(template="curve"), GRID, TAX)
    assert np.all(e.intent == 1.0)


def test_lane_change_has_contiguous_zero_run():
    e = generate_expert(ScenarioSpec(template="lane-change"), GRID, TAX)
    zeros = np.nonzero(e.intent == 0)[0]
    assert len(zeros) > 0
    assert np.all(np.diff(zeros) == 1)
    assert e.intent[0] == 1 and e.intent[-1] == 1


@pytest.mark.parametrize("template", TEMPLATES)
def test_expert_mask_matches_builder(template):
    spec = ScenarioSpec(template=template)
    truth, _ = generate_scene(spec, GRID, TAX)
    e = generate_expert(spec, GRID, TAX)
    assert np.array_equal(e.intent, build_gt_intent_mask(e, truth, TAX))


def test_fork_branches():
    assert np.allclose(expert_path(ScenarioSpec(template="fork"))[:, 1], 0.0)
    left = expert_path(ScenarioSpec(template="fork", branch="left"))
    assert left[-1, 1] > 10.0


def test_single_candidate_is_expert():
    spec = ScenarioSpec(num_candidates=1)
    e = generate_expert(spec, GRID, TAX)
    cs = generate_candidates(spec, e)
    assert len(cs) == 1 and np.array_equal(cs.candidates[0].points, e.points)


def test_zero_amplitudes_give_expert_copies():
    spec = ScenarioSpec(num_candidates=5, offset_scale=0.0)
    e = generate_expert(spec, GRID, TAX)
    cs = generate_candidates(spec, e)
    assert all(np.array_equal(c.points, e.points) for c in cs.candidates)
    assert np.allclose(cs.prior_weights, 0.2)


def test_violating_candidate_is_discarded():
    spec = ScenarioSpec(num_candidates=4, violating=True)
    truth, lf = generate_scene(spec, GRID, TAX)
    smap = build_score_map(lf, TAX, McConfig(32, 0))
    e = generate_expert(spec, GRID, TAX)
    cs = weight_candidates(generate_candidates(spec, e), smap)
    assert cs.discarded[-1]
    assert not cs.discarded[0]
    assert min_safety(cs.candidates[0], smap)[0] > 0.95


def test_candidates_start_at_the_expert_start():
    spec = ScenarioSpec(seed=3, num_candidates=6)
    e = generate_expert(spec, GRID, TAX)
    for c in generate_candidates(spec, e).candidates:
        assert np.allclose(c.points[0], e.points[0])


def test_policy_prior_options():
    spec = ScenarioSpec(seed=2, num_candidates=5, prior_spread=1.0)
    e = generate_expert(spec, GRID, TAX)
    p = generate_candidates(spec, e).prior_weights
    assert not np.allclose(p, 0.2) and abs(p.sum() - 1) < 1e-12
    lean = ScenarioSpec(seed=2, num_candidates=5, prior_lean=2.0)
    cs = generate_candidates(lean, e)
    from uncmap.scenegen import candidate_offsets
    amps = candidate_offsets(lean)
    assert np.argmax(cs.prior_weights) == np.argmax(amps)


def test_scenario_json_round_trip(tmp_path):
    spec = ScenarioSpec(seed=9, template="lane-change", ambiguity=(AmbiguityRegion((10, 5), 2.0, 1.5, 0.3),),
                        agents=(AgentBox((30, 0)),))
    p = tmp_path / "s.json"
    save_scenario(p, spec)
    assert load_scenario(p) == spec
    p.write_text('{"seed": 1, "colour": "red"}')
    with pytest.raises(ConfigurationError):
        load_scenario(p)
