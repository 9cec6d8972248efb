import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uncmap.bev_core import DataError, GridSpec
from uncmap.gradcheck import check_gradient
from uncmap.planner import (
    CandidateSet,
    NoSafePlanError,
    Trajectory,
    bilinear,
    classification_loss,
    min_safety,
    planning_loss,
    ranking_loss,
    rasterize_path,
    read_trajectory,
    select_plan,
    trajectory_loss,
    weight_candidates,
    write_candidate_report,
    write_trajectory,
)
from uncmap.uncertainty import DrivableScoreMap


def unit(h=8, w=8):
    return GridSpec(height=h, width=w, resolution=1.0, origin=(0.0, 0.0))


def smap_from(s, mask=None, spec=None):
    s = np.asarray(s, dtype=float)
    spec = spec or unit(*s.shape)
    mask = np.zeros(s.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return DrivableScoreMap(spec, s, np.zeros_like(s), s, mask, 0.0)


def traj(*pts, **kw):
    return Trajectory(np.array(pts, dtype=float), **kw)


# -- trajectory --------------------------------------------------------------

def test_trajectory_validation():
    with pytest.raises(DataError):
        traj([0, 0])
    with pytest.raises(DataError):
        traj([0, 0], [1, 1], dt=0.0)
    with pytest.raises(DataError):
        traj([0, 0], [1, 1], intent=[0, 2])


def test_trajectory_csv_round_trip(tmp_path):
    t = traj([0, 0], [1.25, -0.5], [2.5, -1.0], dt=0.5, t0=1.0, intent=[1, 0.5, 0])
    p = tmp_path / "t.csv"
    write_trajectory(p, t)
    text = p.read_text().splitlines()
    assert text[0] == "t,x,y,intent"
    assert text[1] == "1.000000,0.000000,0.000000,1.000000"
    back = read_trajectory(p)
    np.testing.assert_allclose(back.points, t.points)
    np.testing.assert_allclose(back.intent, t.intent)
    assert back.dt == 0.5 and back.t0 == 1.0


def test_trajectory_csv_rejects_non_increasing_time(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("t,x,y\n0,0,0\n0,1,1\n")
    with pytest.raises(DataError):
        read_trajectory(p)


# -- rasterization -----------------------------------------------------------

def test_rasterize_adjacent_points():
    rc, ok = rasterize_path(traj([1.0, 1.0], [1.1, 1.0]), unit(), step=0.5)
    assert len(rc) == 2 and ok.all()


def test_rasterize_four_meter_segment():
    rc, _ = rasterize_path(traj([0.5, 0.5], [4.5, 0.5]), unit(), step=0.25)
    assert len(rc) == 17
    np.testing.assert_allclose(np.diff(rc[:, 0]), 0.25)


def test_rasterize_default_step_is_half_resolution():
    spec = GridSpec(height=64, width=64, resolution=0.5, origin=(0.0, 0.0))
    rc, _ = rasterize_path(traj([0, 0], [3, 0]), spec)
    assert len(rc) == 13


@settings(max_examples=100, deadline=None)
@given(
    pts=st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), min_size=2, max_size=8),
    step=st.floats(0.05, 3.0),
)
def test_rasterize_spacing_contract(pts, step):
    spec = GridSpec(height=16, width=16, resolution=0.7, origin=(-5.0, -5.0))
    t = Trajectory(np.array(pts))
    rc, ok = rasterize_path(t, spec, step)
    metric = rc * spec.resolution
    gaps = np.linalg.norm(np.diff(metric, axis=0), axis=1)
    assert np.all(gaps <= step + 1e-9)
    # waypoints are kept
    for p in t.points:
        assert np.min(np.linalg.norm(metric + np.array(spec.origin) - p, axis=1)) < 1e-9
    assert np.array_equal(ok, spec.in_bounds(rc))


def test_rasterize_rejects_bad_step():
    with pytest.raises(ValueError):
        rasterize_path(traj([0, 0], [1, 1]), unit(), step=0.0)


# -- min safety ----------------------------------------------------------------

def test_min_safety_all_ones():
    score, disc = min_safety(traj([0.5, 0.5], [7.5, 7.5]), smap_from(np.ones((8, 8))))
    assert score == 1.0 and not disc


def test_min_safety_discards_masked_pixel():
    mask = np.zeros((8, 8), dtype=bool)
    mask[4, 2] = True
    _, disc = min_safety(traj([0.5, 2.5], [7.5, 2.5]), smap_from(np.ones((8, 8)), mask))
    assert disc
    _, disc = min_safety(traj([0.5, 5.5], [7.5, 5.5]), smap_from(np.ones((8, 8)), mask))
    assert not disc


def test_min_safety_discards_out_of_bounds():
    _, disc = min_safety(traj([0.5, 0.5], [9.0, 0.5]), smap_from(np.ones((8, 8))))
    assert disc
    _, disc = min_safety(traj([0.5, 0.5], [8.0, 0.5]), smap_from(np.ones((8, 8))))
    assert disc  # the far edge is out of bounds


def test_min_safety_discard_ignores_sampling_step():
    # a path that only clips the corner of a masked pixel between samples
    mask = np.zeros((8, 8), dtype=bool)
    mask[3, 4] = True
    t = traj([0.5, 2.5], [7.5, 6.0])  # enters pixel (3, 4) between rows 3.5 and 4
    assert min_safety(t, smap_from(np.ones((8, 8)), mask), step=5.0)[1]
    assert min_safety(t, smap_from(np.ones((8, 8)), mask), step=0.01)[1]


def dense_oracle(t, s, step, factor=10):
    spec = unit(*s.shape)
    rc, _ = rasterize_path(t, spec, step / factor)
    return bilinear(s, rc).min()


def test_min_safety_single_low_pixel():
    s = np.ones((8, 8))
    s[3, 4] = 0.2
    t = traj([0.5, 4.5], [7.5, 4.5])
    score, _ = min_safety(t, smap_from(s), 0.5)
    assert abs(score - dense_oracle(t, s, 0.5)) < 1e-6
    assert score == pytest.approx(0.2)


def manhattan_path(rng, n=6):
    r, c = rng.integers(0, 8, size=2)
    pts = [(r + 0.5, c + 0.5)]
    for _ in range(n):
        if rng.random() < 0.5:
            r = rng.integers(0, 8)
        else:
            c = rng.integers(0, 8)
        if (r + 0.5, c + 0.5) != pts[-1]:
            pts.append((r + 0.5, c + 0.5))
    if len(pts) < 2:
        pts.append((pts[0][0], (pts[0][1] + 1) % 8))
    return Trajectory(np.array(pts, dtype=float))


def test_min_safety_matches_dense_oracle_on_random_maps(rng):
    for _ in range(100):
        s = rng.uniform(0.3, 1.0, size=(8, 8))
        s[rng.integers(8), rng.integers(8)] = 0.2
        t = manhattan_path(rng)
        score, _ = min_safety(t, smap_from(s), 0.5)
        assert abs(score - dense_oracle(t, s, 0.5)) < 1e-6


def test_min_safety_never_above_dense_samples(rng):
    # for arbitrary paths the exact minimum lower-bounds every sample
    for _ in range(50):
        s = rng.uniform(0.0, 1.0, size=(8, 8))
        t = Trajectory(rng.uniform(0.2, 7.8, size=(4, 2)))
        score, _ = min_safety(t, smap_from(s), 0.5)
        fine = dense_oracle(t, s, 0.5, factor=5000)
        assert score <= fine + 1e-12
        assert score == pytest.approx(fine, abs=1e-3)


def test_min_safety_refinement_invariance(rng):
    spec = GridSpec(height=16, width=16, resolution=0.5, origin=(0.0, 0.0))
    for _ in range(20):
        s = rng.uniform(0.0, 1.0, size=(16, 16))
        t = Trajectory(rng.uniform(0.3, 7.7, size=(5, 2)))
        sm = smap_from(s, spec=spec)
        base = min_safety(t, sm, spec.resolution / 4)[0]
        for step in (spec.resolution / 8, spec.resolution / 32):
            assert abs(min_safety(t, sm, step)[0] - base) <= 1e-3


# -- weighting / selection -----------------------------------------------------

def two_lane_map():
    s = np.ones((8, 8))
    s[:, 5:] = 0.4
    return smap_from(s)


def test_equal_candidates_equal_posteriors():
    c = traj([0.5, 1.5], [7.5, 1.5])
    w = weight_candidates(CandidateSet.uniform([c, c]), two_lane_map())
    np.testing.assert_allclose(w.posterior_weights, [0.5, 0.5])


def test_survivor_takes_all_mass():
    mask = np.zeros((8, 8), dtype=bool)
    mask[:, 6] = True
    sm = smap_from(np.ones((8, 8)), mask)
    cs = CandidateSet.uniform([traj([0.5, 1.5], [7.5, 1.5]), traj([0.5, 6.5], [7.5, 6.5])])
    w = weight_candidates(cs, sm)
    assert w.posterior_weights.tolist() == [1.0, 0.0]
    assert select_plan(w).chosen_index == 0


def test_posterior_formula_oracle():
    cs = CandidateSet([traj([0.5, 1.5], [7.5, 1.5]), traj([0.5, 6.5], [7.5, 6.5])], [0.5, 0.5])
    w = weight_candidates(cs, two_lane_map(), beta=4.0)
    np.testing.assert_allclose(w.min_safety, [1.0, 0.4])
    cs2 = CandidateSet(cs.candidates, [0.5, 0.5], min_safety=[0.9, 0.4], beta=4.0)
    a, b = 0.5 * math.exp(4 * 0.9), 0.5 * math.exp(4 * 0.4)
    np.testing.assert_allclose(cs2.posterior_weights, [a / (a + b), b / (a + b)], atol=1e-15)


def test_all_discarded_sets_flag():
    mask = np.ones((8, 8), dtype=bool)
    cs = CandidateSet([traj([0.5, 1.5], [7.5, 1.5]), traj([0.5, 6.5], [7.5, 6.5])], [0.3, 0.7])
    w = weight_candidates(cs, smap_from(np.ones((8, 8)), mask))
    assert w.no_safe_plan
    assert w.posterior_weights.tolist() == [0.0, 0.0]
    assert w.prior_weights.tolist() == [0.3, 0.7]
    with pytest.raises(NoSafePlanError):
        select_plan(w)


def test_select_plan_examples():
    one = CandidateSet.uniform([traj([0, 0], [1, 0])])
    assert select_plan(one).chosen_index == 0
    cands = [traj([0, 0], [1, i]) for i in range(3)]
    cs = CandidateSet(cands, [0.2, 0.5, 0.3])
    assert select_plan(cs).chosen_index == 1
    tie = CandidateSet(cands[:2], [0.5, 0.5])
    assert select_plan(tie).chosen_index == 0


@settings(max_examples=200, deadline=None)
@given(
    ms=st.lists(st.floats(0, 1), min_size=2, max_size=8),
    data=st.data(),
)
def test_weighting_properties(ms, data):
    n = len(ms)
    prior = np.array(data.draw(st.lists(st.floats(0.01, 1), min_size=n, max_size=n)))
    prior /= prior.sum()
    disc = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    cands = [traj([0, 0], [1, i]) for i in range(n)]
    cs = CandidateSet(cands, prior, min_safety=ms, discarded=disc, beta=4.0)
    post = cs.posterior_weights
    if disc.all():
        assert cs.no_safe_plan and np.all(post == 0)
        return
    assert abs(post[~disc].sum() - 1) < 1e-9
    assert np.all(post[disc] == 0)
    idx = select_plan(cs).chosen_index
    assert not disc[idx]


@settings(max_examples=200, deadline=None)
@given(ms=st.lists(st.floats(0, 1), min_size=1, max_size=8), beta=st.floats(0.1, 20))
def test_argmax_invariant_to_monotone_transforms(ms, beta):
    n = len(ms)
    cs = CandidateSet.uniform([traj([0, 0], [1, i]) for i in range(n)])
    cs = CandidateSet(cs.candidates, cs.prior_weights, min_safety=ms, beta=beta)
    idx = select_plan(cs).chosen_index
    z = beta * np.array(ms)
    for g in (np.exp, lambda v: v ** 3, lambda v: 5 * np.arctan(v) - 2):
        assert select_plan(cs.with_logits(g(z))).chosen_index == idx


def test_candidate_report_json(tmp_path):
    cs = CandidateSet([traj([0.5, 1.5], [7.5, 1.5]), traj([0.5, 6.5], [7.5, 6.5])], [0.5, 0.5])
    w = weight_candidates(cs, two_lane_map())
    p = tmp_path / "r.json"
    write_candidate_report(p, w, select_plan(w))
    doc = json.loads(p.read_text())
    assert doc["chosen_index"] == 0
    assert set(doc["candidates"][0]) >= {"min_safety", "posterior_weight", "discarded"}


# -- planning losses ---------------------------------------------------------

def expert_and_set(rng, n=3, t=5):
    base = np.stack([np.linspace(0, 8, t), np.zeros(t)], axis=-1)
    expert = Trajectory(base)
    cands = [Trajectory(base + rng.normal(0, 1, size=base.shape)) for _ in range(n)]
    return expert, CandidateSet.uniform(cands)


def test_classification_loss_examples(rng):
    expert, cs = expert_and_set(rng, 4)
    loss, _ = classification_loss(cs.with_logits(np.zeros(4)), expert)
    assert loss == pytest.approx(math.log(4))
    tgt = int(np.argmin([np.linalg.norm(c.points - expert.points, axis=1).mean() for c in cs.candidates]))
    z = np.full(4, -1e4)
    z[tgt] = 0.0
    loss, _ = classification_loss(cs.with_logits(z), expert)
    assert loss == 0.0


def test_classification_gradient_three_candidates(rng):
    expert, cs = expert_and_set(rng, 3)
    z0 = rng.normal(size=3)
    _, g = classification_loss(cs.with_logits(z0), expert)
    ok, err = check_gradient(lambda z: classification_loss(cs.with_logits(z), expert)[0], z0, g)
    assert ok, err


def test_trajectory_loss_examples(rng):
    expert, cs = expert_and_set(rng)
    assert trajectory_loss(expert, expert)[0] == 0.0
    assert np.all(trajectory_loss(expert, expert)[1] == 0.0)
    shifted = expert.with_points(expert.points + [1.0, 0.0])
    assert trajectory_loss(shifted, expert)[0] == pytest.approx(1.0)


def test_trajectory_loss_resamples_expert():
    expert = traj([0, 0], [2, 0], [4, 0], dt=1.0)
    chosen = Trajectory(np.array([[0, 1], [1, 1], [2, 1], [3, 1], [4, 1]], dtype=float), dt=0.5)
    assert trajectory_loss(chosen, expert)[0] == pytest.approx(1.0)


def test_ranking_loss_examples():
    expert = traj([0, 0], [4, 0])
    near, far = traj([0, 0.2], [4, 0.2]), traj([0, 1], [4, 1])
    cs = CandidateSet.uniform([near, far])
    assert ranking_loss(cs.with_logits([1.0, 0.0]), expert)[0] == 0.0
    assert ranking_loss(cs.with_logits([0.0, 0.0]), expert, margin=0.1)[0] == pytest.approx(0.1)


def test_planning_loss_composition(rng):
    expert, cs = expert_and_set(rng, 4)
    w = cs.with_logits(rng.normal(size=4))
    assert planning_loss(w, expert, 0, 0, 0).total == 0.0
    assert planning_loss(w, expert, 1, 0, 0).total == pytest.approx(classification_loss(w, expert)[0])
    rep = planning_loss(w, expert, 1, 1, 1)
    idx = select_plan(w).chosen_index
    ref = (classification_loss(w, expert)[0] + trajectory_loss(w.candidates[idx], expert)[0]
           + ranking_loss(w, expert)[0])
    assert rep.total == pytest.approx(ref, abs=1e-12)
    assert set(rep.components) == {"cls", "traj", "rank"}
    with pytest.raises(ValueError):
        planning_loss(w, expert, -1, 0, 0)
