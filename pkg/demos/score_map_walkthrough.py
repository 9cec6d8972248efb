"""Walk through one synthetic scene: logits -> expected probabilities ->
drivable score map, and look at what an ambiguity region does to it.

    python demos/score_map_walkthrough.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from uncmap import ClassTaxonomy, GridSpec, McConfig, build_score_map
from uncmap.bev_core import pixel_to_world
from uncmap.losses import expected_calibration_error
from uncmap.scenegen import AmbiguityRegion, ScenarioSpec, generate_scene
from uncmap.uncertainty import write_pgm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

grid, tax = GridSpec(), ClassTaxonomy()
fog = AmbiguityRegion(center=(20.0, 0.0), radius=5.0, sigma_boost=2.5)
spec = ScenarioSpec(seed=1, template="curve", noise_level=0.3, ambiguity=(fog,))
truth, logits = generate_scene(spec, grid, tax)

smap = build_score_map(logits, tax, McConfig(num_samples=128, seed=spec.seed))

# pixels whose centers fall inside the fog disk
world = pixel_to_world(grid.pixel_centers(), grid)
inside = np.linalg.norm(world - fog.center, axis=-1) <= fog.radius
road = truth.drivable(tax)

print(f"grid {grid.shape} at {grid.resolution} m/px, {road.sum()} drivable pixels")
for name, sel in (("road, clear", road & ~inside), ("road, fog", road & inside),
                  ("off-road, clear", ~road & ~inside), ("off-road, fog", ~road & inside)):
    print(f"  {name:16s} p_pos {smap.p_pos[sel].mean():.3f}  h {smap.h_group[sel].mean():.3f}"
          f"  s_safe {smap.s_safe[sel].mean():.3f}")

# entropy pulls s_safe toward 0.5 in the fog: the map stops claiming either way
for src in ("p_pos", "s_safe"):
    print(f"ECE ({src}): {expected_calibration_error(smap, road, source=src).ece:.4f}")

write_pgm(out / "s_safe.pgm", smap.s_safe)
write_pgm(out / "h_group.pgm", smap.h_group)
print(f"wrote {out / 's_safe.pgm'} and {out / 'h_group.pgm'}")
