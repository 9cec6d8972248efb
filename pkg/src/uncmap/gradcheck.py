"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

DEFAULT_STEP = 1e-4
DEFAULT_RTOL = 1e-5


def numerical_gradient(f, x, step: float = DEFAULT_STEP) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        fp = f(x)
        x.flat[i] = orig - step
        fm = f(x)
        x.flat[i] = orig
        g.flat[i] = (fp - fm) / (2 * step)
    return g


def relative_error(analytic, numeric) -> float:
    """Max-abs difference scaled by the larger gradient's max-abs entry
    (floored at 1e-8 so all-zero gradients compare absolutely)."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_gradient(f, x, analytic, step: float = DEFAULT_STEP, rtol: float = DEFAULT_RTOL):
    err = relative_error(analytic, numerical_gradient(f, x, step))
    return err <= rtol, err


# -- random small instances ------------------------------------------------
#
# Each builder returns ``(f, x0, analytic)`` for one loss on a tiny random
# problem.  Instances are redrawn until every non-smooth point (|.| kinks,
# hinge corners, nearest-neighbour switches) is at least ``_KINK_GAP`` away,
# so central differences see a locally smooth function.

_KINK_GAP = 5e-2


def _small_grid(rng, h, w, k=4):
    from .bev_core import GridSpec, SemanticGrid

    spec = GridSpec(height=h, width=w, resolution=0.5, origin=(0.0, 0.0))
    return spec, SemanticGrid(spec, rng.integers(0, k, size=(h, w)), num_classes=k)


def _inst_perc(rng):
    from .uncertainty import LogitField, McConfig, perception_loss

    spec, target = _small_grid(rng, 3, 3)
    mu = rng.normal(0.0, 1.5, size=(3, 3, 4))
    ls = rng.uniform(-2.0, 0.5, size=(3, 3, 4))
    cfg = McConfig(num_samples=4, seed=int(rng.integers(2**32)))
    _, g_mu, g_ls = perception_loss(LogitField(spec, mu, ls), target, cfg)
    x0 = np.concatenate([mu.ravel(), ls.ravel()])

    def f(x):
        return perception_loss(LogitField(spec, x[:36].reshape(mu.shape), x[36:].reshape(mu.shape)), target, cfg)[0]

    return f, x0, np.concatenate([g_mu.ravel(), g_ls.ravel()])


def _candidates(rng, n=5, t=6):
    from .planner import CandidateSet, Trajectory

    base = np.stack([np.linspace(0.0, 10.0, t), np.zeros(t)], axis=-1)
    expert = Trajectory(base + rng.normal(0, 0.2, size=base.shape))
    cands = [Trajectory(base + rng.normal(0, 1.0, size=base.shape)) for _ in range(n)]
    return expert, CandidateSet.uniform(cands)


def _inst_cls(rng):
    from .planner import classification_loss

    expert, cset = _candidates(rng)
    z0 = rng.normal(0.0, 2.0, size=len(cset))
    _, g = classification_loss(cset.with_logits(z0), expert)
    return (lambda z: classification_loss(cset.with_logits(z), expert)[0]), z0, g


def _inst_traj(rng):
    from .planner import Trajectory, trajectory_loss

    expert, cset = _candidates(rng)
    pts = cset.candidates[0].points
    while np.abs(pts - expert.points).min() < _KINK_GAP:
        pts = pts + rng.normal(0, 0.1, size=pts.shape)
    _, g = trajectory_loss(Trajectory(pts), expert)
    f = lambda x: trajectory_loss(Trajectory(x.reshape(pts.shape)), expert)[0]  # noqa: E731
    return f, pts.ravel(), g.ravel()


def _inst_rank(rng):
    from .planner import DEFAULT_MARGIN, expert_distances, ranking_loss

    expert, cset = _candidates(rng)
    d = expert_distances(cset, expert)
    closer = d[:, None] < d[None, :]
    while True:
        z0 = rng.normal(0.0, 0.3, size=len(cset))
        gap = DEFAULT_MARGIN - (z0[:, None] - z0[None, :])
        if np.all(np.abs(gap[closer]) > _KINK_GAP):
            break
    _, g = ranking_loss(cset.with_logits(z0), expert)
    return (lambda z: ranking_loss(cset.with_logits(z), expert)[0]), z0, g


def _inst_intent(rng):
    from .lane_reg import intent_loss

    t = 8
    m_gt = rng.integers(0, 2, size=t).astype(float)
    pi = rng.integers(0, t, size=t)
    m0 = rng.uniform(0.05, 0.95, size=t)
    _, g = intent_loss(m0, m_gt, pi)
    return (lambda m: intent_loss(m, m_gt, pi)[0]), m0, g


def _inst_center(rng):
    from .bev_core import ClassTaxonomy, SemanticGrid, project_to_grid
    from .lane_reg import CenterlineField, centerline_loss
    from .planner import Trajectory

    tax = ClassTaxonomy()
    spec, _ = _small_grid(rng, 8, 8)
    labels = np.ones((8, 8), dtype=int)
    labels[rng.random((8, 8)) < 0.15] = tax.centerline_class
    labels[rng.integers(8), rng.integers(8)] = tax.centerline_class
    grid = SemanticGrid(spec, labels)
    field = CenterlineField(grid, tax)
    t = 6
    while True:
        pts = rng.uniform(0.2, 3.8, size=(t, 2))
        rc, _ = project_to_grid(pts, spec)
        dd = np.sort(np.linalg.norm(rc[:, None, :] - field.centers[None], axis=-1), axis=1)
        gap = dd[:, 1] - dd[:, 0] if dd.shape[1] > 1 else np.full(t, np.inf)
        if dd[:, 0].min() > _KINK_GAP and gap.min() > _KINK_GAP:
            break
    active = rng.random(t) < 0.7
    active[0] = True
    _, g = centerline_loss(Trajectory(pts), active, grid, tax, field)
    f = lambda x: centerline_loss(Trajectory(x.reshape(pts.shape)), active, grid, tax, field)[0]  # noqa: E731
    return f, pts.ravel(), g.ravel()


def _pbar(rng, target):
    p = rng.uniform(0.3, 1.0, size=target.labels.shape + (4,))
    return p / p.sum(axis=-1, keepdims=True)


def _inst_focal(rng):
    from .losses import focal_loss

    _, target = _small_grid(rng, 3, 4)
    p0 = _pbar(rng, target)
    _, g = focal_loss(p0, target)
    return (lambda x: focal_loss(x.reshape(p0.shape), target)[0]), p0.ravel(), g.ravel()


def _inst_dice(rng):
    from .losses import dice_loss

    _, target = _small_grid(rng, 3, 4)
    p0 = _pbar(rng, target)
    _, g = dice_loss(p0, target)
    return (lambda x: dice_loss(x.reshape(p0.shape), target)[0]), p0.ravel(), g.ravel()


INSTANCE_BUILDERS = {
    "perc": _inst_perc,
    "cls": _inst_cls,
    "traj": _inst_traj,
    "rank": _inst_rank,
    "intent": _inst_intent,
    "center": _inst_center,
    "focal": _inst_focal,
    "dice": _inst_dice,
}


def self_check(seed: int = 0, instances: int = 100, step: float = DEFAULT_STEP, rtol: float = DEFAULT_RTOL) -> dict:
    """Finite-difference check of every loss on ``instances`` random problems.

    Returns ``{loss: {"instances", "max_rel_error", "pass"}}``.
    """
    out = {}
    for i, (name, build) in enumerate(INSTANCE_BUILDERS.items()):
        rng = np.random.default_rng([int(seed), i])
        worst = 0.0
        for _ in range(instances):
            f, x0, g = build(rng)
            worst = max(worst, check_gradient(f, x0, g, step, rtol)[1])
        out[name] = {"instances": instances, "max_rel_error": worst, "pass": bool(worst <= rtol)}
    return out
