"""Run configuration shared by every CLI verb.

A RunConfig is a JSON object; every field is optional.  ``scenario`` is a
path to a scenario JSON, resolved relative to the config file.  Without it
the default straight-road scenario is used.

    {
      "scenario": "fork.json",
      "grid": {"height": 128, "width": 128, "resolution": 0.5, "origin": [-8.25, -32.25]},
      "taxonomy": {"num_classes": 4, "drivable_set": [1, 2], "centerline_class": 2},
      "mc": {"num_samples": 128, "seed": null},
      "loss_samples": 32,
      "tau_drive": 0.3,
      "beta": 4.0,
      "weights": {"perc": 1, "focal": 1, "dice": 1, "cls": 1, "traj": 1,
                  "rank": 1, "intent": 1, "center": 1},
      "d_follow": 0.5,
      "out": "out",
      "uncertainty": true,
      "lane_reg": false,
      "lane_weight": 1.0,
      "include_expert": true,
      "prediction": "chosen",
      "sweep": {"suite": "scenario", "seeds": [0, 1, 2]},
      "gradcheck_instances": 5
    }

``mc.seed = null`` means "use the scenario seed".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bev_core import ClassTaxonomy, ConfigurationError, GridSpec
from .lane_reg import DEFAULT_D_FOLLOW
from .losses import LossWeights
from .planner import DEFAULT_BETA
from .scenegen import ScenarioSpec, load_scenario
from .uncertainty import DEFAULT_LOSS_SAMPLES, DEFAULT_MAP_SAMPLES, DEFAULT_TAU_DRIVE, McConfig

SUITES = ("scenario", "ambiguity", "lane")
PREDICTIONS = ("chosen", "expert")

_FIELDS = {
    "scenario", "grid", "taxonomy", "mc", "loss_samples", "tau_drive", "beta", "weights",
    "d_follow", "out", "uncertainty", "lane_reg", "lane_weight", "include_expert",
    "prediction", "sweep", "gradcheck_instances",
}


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    scenario_path: Path | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy)
    mc_samples: int = DEFAULT_MAP_SAMPLES
    mc_seed: int | None = None
    loss_samples: int = DEFAULT_LOSS_SAMPLES
    tau_drive: float = DEFAULT_TAU_DRIVE
    beta: float = DEFAULT_BETA
    weights: LossWeights = field(default_factory=LossWeights)
    d_follow: float = DEFAULT_D_FOLLOW
    out: Path = Path("out")
    uncertainty: bool = True
    lane_reg: bool = False
    lane_weight: float = 1.0
    include_expert: bool = True
    prediction: str = "chosen"
    suite: str = "scenario"
    seeds: tuple[int, ...] | None = None
    gradcheck_instances: int = 5

    def __post_init__(self):
        if self.mc_samples < 1 or self.loss_samples < 1:
            raise ConfigurationError("Monte-Carlo sample counts must be >= 1")
        if not 0.0 <= self.tau_drive <= 1.0:
            raise ConfigurationError(f"tau_drive must lie in [0, 1], got {self.tau_drive}")
        if not self.beta >= 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if not self.d_follow > 0:
            raise ConfigurationError(f"d_follow must be positive, got {self.d_follow}")
        if not self.lane_weight >= 0:
            raise ConfigurationError("lane_weight must be >= 0")
        if self.prediction not in PREDICTIONS:
            raise ConfigurationError(f"prediction must be one of {PREDICTIONS}")
        if self.suite not in SUITES:
            raise ConfigurationError(f"sweep suite must be one of {SUITES}")
        if self.seeds is not None and len(self.seeds) == 0:
            raise ConfigurationError("sweep needs at least one seed")
        if self.gradcheck_instances < 1:
            raise ConfigurationError("gradcheck_instances must be >= 1")

    @property
    def mc(self) -> McConfig:
        seed = self.scenario.seed if self.mc_seed is None else self.mc_seed
        return McConfig(self.mc_samples, seed)

    def mc_for(self, scenario_seed: int) -> McConfig:
        return McConfig(self.mc_samples, scenario_seed if self.mc_seed is None else self.mc_seed)

    @property
    def sweep_seeds(self) -> tuple[int, ...]:
        return self.seeds if self.seeds is not None else (self.scenario.seed,)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "seed" in kw:
            kw["scenario"] = self.scenario.replace(seed=int(kw.pop("seed")))
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "grid": self.grid.to_dict(),
            "taxonomy": self.taxonomy.to_dict(),
            "mc": {"num_samples": self.mc_samples, "seed": self.mc.seed},
            "loss_samples": self.loss_samples,
            "tau_drive": self.tau_drive,
            "beta": self.beta,
            "weights": {k: float(getattr(self.weights, k)) for k in LossWeights.__dataclass_fields__},
            "d_follow": self.d_follow,
            "uncertainty": self.uncertainty,
            "lane_reg": self.lane_reg,
            "lane_weight": self.lane_weight,
            "include_expert": self.include_expert,
            "prediction": self.prediction,
            "sweep": {"suite": self.suite, "seeds": list(self.sweep_seeds)},
        }


def _bool(v, name):
    if isinstance(v, bool):
        return v
    raise ConfigurationError(f"{name} must be true or false")


def run_config_from_dict(d: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from parsed JSON.  Raises FileNotFoundError for a
    missing scenario file and ConfigurationError for anything malformed."""
    if not isinstance(d, dict):
        raise ConfigurationError("run config must be a JSON object")
    unknown = set(d) - _FIELDS
    if unknown:
        raise ConfigurationError(f"unknown run-config fields: {sorted(unknown)}")
    base_dir = Path(base_dir or ".")
    kw = {}
    if d.get("scenario") is not None:
        sc = d["scenario"]
        if isinstance(sc, dict):
            kw["scenario"] = ScenarioSpec.from_dict(sc)
        else:
            path = base_dir / sc
            if not path.is_file():
                raise FileNotFoundError(f"scenario file not found: {path}")
            kw["scenario"] = load_scenario(path)
            kw["scenario_path"] = path
    if "grid" in d:
        kw["grid"] = GridSpec.from_dict(d["grid"])
    if "taxonomy" in d:
        tx = {k: v for k, v in d["taxonomy"].items() if k != "centerline_is_drivable"}
        kw["taxonomy"] = ClassTaxonomy.from_dict(tx)
    mc = d.get("mc", {})
    if "num_samples" in mc:
        kw["mc_samples"] = int(mc["num_samples"])
    if mc.get("seed") is not None:
        kw["mc_seed"] = int(mc["seed"])
    for key in ("loss_samples", "gradcheck_instances"):
        if key in d:
            kw[key] = int(d[key])
    for key in ("tau_drive", "beta", "d_follow", "lane_weight"):
        if key in d:
            kw[key] = float(d[key])
    if "weights" in d:
        w = d["weights"]
        bad = set(w) - set(LossWeights.__dataclass_fields__)
        if bad:
            raise ConfigurationError(f"unknown loss weights: {sorted(bad)}")
        try:
            kw["weights"] = LossWeights(**{k: float(v) for k, v in w.items()})
        except ValueError as e:
            raise ConfigurationError(str(e)) from None
    for key in ("uncertainty", "lane_reg", "include_expert"):
        if key in d:
            kw[key] = _bool(d[key], key)
    if "prediction" in d:
        kw["prediction"] = str(d["prediction"])
    if "out" in d:
        kw["out"] = base_dir / d["out"]
    sweep = d.get("sweep") or {}
    if "suite" in sweep:
        kw["suite"] = str(sweep["suite"])
    if "seeds" in sweep:
        seeds = sweep["seeds"]
        kw["seeds"] = tuple(range(int(seeds))) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
    return RunConfig(**kw)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from None
    return run_config_from_dict(doc, path.parent)
