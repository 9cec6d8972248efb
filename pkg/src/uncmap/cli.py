"""``uncmap`` command line: gen, scoremap, plan, eval, losses.

Exit codes: 0 success (a no-safe-plan outcome is a success with a warning),
2 validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bev_core import ConfigurationError, DataError, write_semantic_grid
from .config import SUITES, RunConfig, load_run_config
from .experiments import (
    ambiguity_suite_spec,
    build_scene,
    lane_suite_spec,
    plan_scene,
    scene_metrics,
    sign_test,
)
from .gradcheck import self_check
from .lane_reg import lane_loss, soft_intent
from .losses import bev_loss, dice_loss, expected_calibration_error, focal_loss, total_loss
from .planner import chosen_candidate, planning_loss, write_trajectory
from .scenegen import generate_candidates, generate_expert, generate_scene, save_scenario
from .uncertainty import (
    McConfig,
    expected_probabilities,
    perception_loss,
    write_logit_field,
    write_pgm,
    write_score_map,
)

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3
METRIC_KEYS = ("dac_like", "lk_like", "min_safety", "ece", "h_at_min_safety")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n")


def worker_count() -> int:
    raw = os.environ.get("UNCMAP_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"UNCMAP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"UNCMAP_THREADS must be a positive integer, got {raw!r}")
    return n


def _warn(msg: str) -> None:
    print(f"uncmap: warning: {msg}", file=sys.stderr)


def _scene(cfg: RunConfig, spec=None, include_expert=None):
    spec = spec or cfg.scenario
    inc = cfg.include_expert if include_expert is None else include_expert
    return build_scene(spec, cfg.grid, cfg.taxonomy, cfg.mc_for(spec.seed), cfg.tau_drive, cfg.d_follow, inc)


# -- verbs -----------------------------------------------------------------

def cmd_gen(cfg: RunConfig) -> int:
    spec = cfg.scenario
    truth, lf = generate_scene(spec, cfg.grid, cfg.taxonomy)
    expert = generate_expert(spec, cfg.grid, cfg.taxonomy, cfg.d_follow)
    cset = generate_candidates(spec, expert, include_expert=cfg.include_expert)
    out = cfg.out
    (out / "candidates").mkdir(parents=True, exist_ok=True)
    save_scenario(out / "scenario.json", spec)
    write_semantic_grid(out / "truth.bevg", truth)
    write_logit_field(out / "logits.lgtf", lf)
    write_trajectory(out / "expert.csv", expert)
    for i, c in enumerate(cset.candidates):
        write_trajectory(out / "candidates" / f"cand_{i:02d}.csv", c)
    write_json(out / "candidates.json", {
        "num_candidates": len(cset),
        "prior_weights": cset.prior_weights,
        "files": [f"candidates/cand_{i:02d}.csv" for i in range(len(cset))],
    })
    return EXIT_OK


def cmd_scoremap(cfg: RunConfig) -> int:
    scene = _scene(cfg)
    smap = scene.smap if cfg.uncertainty else scene.smap.without_uncertainty()
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    write_score_map(out / "score_map.dsmp", smap)
    write_pgm(out / "s_safe.pgm", smap.s_safe)
    h, w = smap.spec.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    table = np.column_stack([rows, cols, smap.p_pos.ravel(), smap.h_group.ravel(),
                             smap.s_safe.ravel(), smap.nondrivable_mask.ravel()])
    np.savetxt(out / "score_map.csv", table, delimiter=",", fmt=["%d", "%d", "%.6f", "%.6f", "%.6f", "%d"],
               header="row,col,p_pos,h_group,s_safe,nondrivable", comments="")
    drivable = scene.truth.drivable(cfg.taxonomy)
    cal = {}
    for source in ("p_pos", "s_safe"):
        rep = expected_calibration_error(smap, drivable, source=source)
        rep.write_csv(out / f"reliability_{source}.csv")
        cal[source] = rep.to_dict()
    write_json(out / "calibration.json", {"run_config": cfg.to_dict(), **cal})
    return EXIT_OK


def cmd_plan(cfg: RunConfig) -> int:
    scene = _scene(cfg)
    res = plan_scene(scene, cfg.uncertainty, cfg.lane_reg, cfg.beta, cfg.lane_weight, cfg.taxonomy, cfg.d_follow)
    wset = res["set"]
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    doc = {"run_config": cfg.to_dict(), **wset.to_dict(), "chosen_index": res["chosen_index"]}
    write_json(out / "plan_report.json", doc)
    chosen_csv = out / "chosen.csv"
    if res["no_safe_plan"]:
        _warn("every candidate crosses non-drivable or out-of-grid pixels; no safe plan")
        chosen_csv.unlink(missing_ok=True)
    else:
        write_trajectory(chosen_csv, wset.candidates[res["chosen_index"]])
    return EXIT_OK


def _suite_scene(cfg: RunConfig, seed: int):
    if cfg.suite == "ambiguity":
        return _scene(cfg, ambiguity_suite_spec(seed))
    if cfg.suite == "lane":
        return _scene(cfg, lane_suite_spec(seed), include_expert=False)
    return _scene(cfg, cfg.scenario.replace(seed=seed))


def _arms(cfg: RunConfig, compare: str):
    if compare == "uncertainty":
        return [("on", True, cfg.lane_reg), ("off", False, cfg.lane_reg)]
    if compare == "lane-reg":
        return [("on", cfg.uncertainty, True), ("off", cfg.uncertainty, False)]
    return [("run", cfg.uncertainty, cfg.lane_reg)]


def _eval_one(cfg: RunConfig, seed: int, compare: str) -> dict:
    scene = _suite_scene(cfg, seed)
    row = {"seed": int(seed), "template": scene.spec.template}
    for arm, unc, lane in _arms(cfg, compare):
        res = plan_scene(scene, unc, lane, cfg.beta, cfg.lane_weight, cfg.taxonomy, cfg.d_follow)
        smap = scene.smap if unc else scene.smap.without_uncertainty()
        row[arm] = scene_metrics(scene, res["chosen_index"], cfg.taxonomy, cfg.d_follow, res["set"], smap)
    return row


def _aggregate(rows, arm):
    agg = {}
    for key in METRIC_KEYS:
        vals = np.array([r[arm][key] for r in rows if r[arm][key] is not None], dtype=float)
        agg[key] = {
            "mean": float(vals.mean()) if len(vals) else None,
            "stdev": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0 if len(vals) else None,
            "n": int(len(vals)),
        }
    agg["no_safe_plan"] = int(sum(bool(r[arm]["no_safe_plan"]) for r in rows))
    return agg


def cmd_eval(cfg: RunConfig, compare: str = "none") -> int:
    seeds = cfg.sweep_seeds
    with ThreadPoolExecutor(max_workers=min(worker_count(), len(seeds))) as pool:
        rows = list(pool.map(lambda s: _eval_one(cfg, s, compare), seeds))
    arms = [a for a, _, _ in _arms(cfg, compare)]
    doc = {
        "run_config": cfg.to_dict(),
        "compare": compare,
        "per_scenario": rows,
        "aggregate": {a: _aggregate(rows, a) for a in arms},
    }
    if compare != "none":
        paired = {}
        for key in ("dac_like", "lk_like"):
            on = [np.nan if r["on"][key] is None else r["on"][key] for r in rows]
            off = [np.nan if r["off"][key] is None else r["off"][key] for r in rows]
            paired[key] = sign_test(on, off)
        doc["paired_sign_test"] = paired
    for arm in arms:
        n = doc["aggregate"][arm]["no_safe_plan"]
        if n:
            _warn(f"arm {arm!r}: {n} scenario(s) with no safe plan")
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out / "metrics.json", doc)
    return EXIT_OK


def cmd_losses(cfg: RunConfig) -> int:
    scene = _scene(cfg)
    w = cfg.weights
    seed = cfg.mc.seed
    l_perc, _, _ = perception_loss(scene.logits, scene.truth, McConfig(cfg.loss_samples, seed))
    pbar = expected_probabilities(scene.logits, cfg.mc)
    l_focal, _ = focal_loss(pbar, scene.truth)
    l_dice, _ = dice_loss(pbar, scene.truth)
    bev = bev_loss({"perc": l_perc, "focal": l_focal, "dice": l_dice}, w)

    res = plan_scene(scene, cfg.uncertainty, cfg.lane_reg, cfg.beta, cfg.lane_weight, cfg.taxonomy, cfg.d_follow)
    wset = res["set"]
    if res["no_safe_plan"]:
        _warn("no safe plan; losses use the highest-logit candidate")
    idx = res["chosen_index"] if res["chosen_index"] is not None else chosen_candidate(wset)
    pred = scene.expert if cfg.prediction == "expert" else wset.candidates[idx]
    lane = lane_loss(pred, scene.expert, soft_intent(pred, scene.field, cfg.d_follow), scene.expert.intent,
                     scene.truth, cfg.taxonomy, w.intent, w.center, scene.field)
    planning = planning_loss(wset, scene.expert, w.cls, w.traj, w.rank, prediction=pred)
    total = total_loss(bev, lane, planning)

    checks = self_check(seed, cfg.gradcheck_instances)
    all_pass = all(c["pass"] for c in checks.values())
    if not all_pass:
        _warn("finite-difference gradient check failed for: "
              + ", ".join(k for k, c in checks.items() if not c["pass"]))
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out / "losses.json", {
        "run_config": cfg.to_dict(),
        "chosen_index": idx,
        "report": total.to_dict(),
        "components": total.flat(),
        "total": total.total,
        "gradient_check": {"seed": seed, "all_pass": all_pass, "losses": checks},
    })
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def _onoff(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run-config JSON")
    common.add_argument("--seed", type=int, help="scenario seed (also the Monte-Carlo seed unless mc.seed is set)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--uncertainty", type=_onoff, metavar="{on,off}")
    common.add_argument("--lane-reg", type=_onoff, metavar="{on,off}")
    common.add_argument("--mc-samples", type=int, metavar="T")
    common.add_argument("--tau-drive", type=float)
    common.add_argument("--beta", type=float)

    p = argparse.ArgumentParser(prog="uncmap", description="Uncertainty-aware BEV drivable maps and planning.")
    p.add_argument("--version", action="version", version=f"uncmap {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen", parents=[common], help="generate a synthetic scene and its candidates")
    sub.add_parser("scoremap", parents=[common], help="write the drivable score map")
    sub.add_parser("plan", parents=[common], help="weight candidates and pick a plan")
    ev = sub.add_parser("eval", parents=[common], help="metrics over a seed sweep")
    ev.add_argument("--compare", choices=("none", "uncertainty", "lane-reg"), default="none",
                    help="run paired arms with the named toggle on and off")
    ev.add_argument("--suite", choices=SUITES, help="scene family for the sweep")
    ev.add_argument("--seeds", type=int, metavar="N", help="sweep seeds 0..N-1")
    sub.add_parser("losses", parents=[common], help="evaluate every loss term and self-check gradients")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config is not None else RunConfig()
    over = {
        "seed": args.seed,
        "out": args.out,
        "uncertainty": args.uncertainty,
        "lane_reg": args.lane_reg,
        "mc_samples": args.mc_samples,
        "tau_drive": args.tau_drive,
        "beta": args.beta,
    }
    if getattr(args, "suite", None) is not None:
        over["suite"] = args.suite
    if getattr(args, "seeds", None) is not None:
        if args.seeds < 1:
            raise ConfigurationError("--seeds must be >= 1")
        over["seeds"] = tuple(range(args.seeds))
    return cfg.with_overrides(**over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        worker_count()
        if args.verb == "eval":
            return cmd_eval(cfg, args.compare)
        return {"gen": cmd_gen, "scoremap": cmd_scoremap, "plan": cmd_plan, "losses": cmd_losses}[args.verb](cfg)
    except OSError as e:
        print(f"uncmap: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, DataError, ValueError, TypeError) as e:
        print(f"uncmap: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
