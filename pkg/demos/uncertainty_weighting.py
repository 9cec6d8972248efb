"""Candidate weighting with and without the entropy term.

The ambiguity-suite scenes hallucinate road on one shoulder.  A planner
that only sees p_pos happily drifts there; the safety score keeps it on
the real road.

    python demos/uncertainty_weighting.py [seed]
"""
import sys

from uncmap import ClassTaxonomy
from uncmap.experiments import ambiguity_suite_spec, build_scene, dac_like, plan_scene, path_uncertainty
from uncmap.uncertainty import McConfig

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 5
spec = ambiguity_suite_spec(seed)
scene = build_scene(spec, mc=McConfig(128, seed))
print(f"seed {seed}: {spec.template}, {len(scene.cset)} candidates")

for label, flag in (("uncertainty ON", True), ("uncertainty OFF", False)):
    res = plan_scene(scene, uncertainty=flag)
    wset = res["set"]
    print(f"\n{label}")
    print("  idx  prior   min_s   posterior")
    for i in range(len(wset)):
        mark = " x" if wset.discarded[i] else "  "
        print(f"  {i:3d}  {wset.prior_weights[i]:.3f}  {wset.min_safety[i]:.3f}  {wset.posterior_weights[i]:.3f}{mark}")
    k = res["chosen_index"]
    if k is None:
        print("  no safe plan")
        continue
    traj = scene.cset.candidates[k]
    unc = path_uncertainty(traj, scene.smap)
    print(f"  chose {k}: DAC-like {dac_like(traj, scene.truth, ClassTaxonomy()):.3f}, "
          f"h at min safety {unc['h_at_min_safety']:.3f}")
