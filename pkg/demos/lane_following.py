"""Lane regularization on a lane-change scene.

The expert's intent mask switches off while it crosses between lanes, so
the centerline penalty only applies where following the lane was the plan.

    python demos/lane_following.py
"""
import numpy as np

from uncmap import ClassTaxonomy
from uncmap.experiments import build_scene, lane_suite_spec, lk_like, plan_scene
from uncmap.lane_reg import lane_loss, soft_intent
from uncmap.uncertainty import McConfig

tax = ClassTaxonomy()
spec = lane_suite_spec(2)  # lane-change template
scene = build_scene(spec, mc=McConfig(64, spec.seed), include_expert=False)
e = scene.expert
print("expert intent:", "".join(str(int(v)) for v in e.intent))

print("\n  idx  intent  center  total  LK-like")
for i, cand in enumerate(scene.cset.candidates):
    rep = lane_loss(cand, e, soft_intent(cand, scene.field), e.intent, scene.truth, tax, field=scene.field)
    parts = rep.components
    print(f"  {i:3d}  {parts['intent']:.3f}  {parts['center']:7.3f}  {rep.total:6.3f}"
          f"  {lk_like(cand, e, scene.truth, tax, field=scene.field):.3f}")

for flag in (False, True):
    k = plan_scene(scene, lane_reg=flag)["chosen_index"]
    print(f"lane_reg {'on ' if flag else 'off'}: chose {k}, "
          f"LK-like {lk_like(scene.cset.candidates[k], e, scene.truth, tax, field=scene.field):.3f}")

# moving a point where the expert leaves the lane costs nothing
off = np.nonzero(e.intent == 0)[0]
print(f"\n{len(off)} expert points carry intent 0 (t = {e.dt * off.min():.1f} .. {e.dt * off.max():.1f} s)")
