import json
import subprocess
import sys

import numpy as np
import pytest

from uncmap.cli import main
from uncmap.uncertainty import read_pgm

FAST = ["--mc-samples", "16"]


def run(tmp_path, *args, config=None):
    argv = list(args) + ["--out", str(tmp_path)] + FAST
    if config is not None:
        cfg = tmp_path.parent / f"{tmp_path.name}_cfg.json"
        cfg.write_text(json.dumps(config))
        argv += ["--config", str(cfg)]
    return main(argv)


def load(path):
    return json.loads(path.read_text())


def test_gen_writes_artifacts(tmp_path):
    assert run(tmp_path, "gen", "--seed", "3") == 0
    for name in ("scenario.json", "truth.bevg", "logits.lgtf", "expert.csv", "candidates.json"):
        assert (tmp_path / name).is_file()
    doc = load(tmp_path / "candidates.json")
    assert len(list((tmp_path / "candidates").glob("cand_*.csv"))) == doc["num_candidates"]
    assert load(tmp_path / "scenario.json")["seed"] == 3


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["scoremap", "--seed", "4", "--out", str(out)] + FAST) == 0
        assert main(["plan", "--seed", "4", "--out", str(out)] + FAST) == 0
    for name in ("score_map.dsmp", "s_safe.pgm", "score_map.csv", "calibration.json", "plan_report.json",
                 "chosen.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_scoremap_pgm_bright_on_road(tmp_path):
    from uncmap.bev_core import ClassTaxonomy, GridSpec
    from uncmap.scenegen import ScenarioSpec, generate_scene
    assert main(["scoremap", "--out", str(tmp_path), "--mc-samples", "128"]) == 0
    img = read_pgm(tmp_path / "s_safe.pgm")
    truth, _ = generate_scene(ScenarioSpec(), GridSpec(), ClassTaxonomy())
    drv = truth.drivable(ClassTaxonomy())
    assert img[drv].min() >= 242
    assert img[~drv].max() <= 13
    cal = load(tmp_path / "calibration.json")
    assert set(cal) >= {"p_pos", "s_safe", "run_config"}


def test_plan_single_clean_candidate(tmp_path):
    assert run(tmp_path, "plan", config={"scenario": {"num_candidates": 1}}) == 0
    rep = load(tmp_path / "plan_report.json")
    assert rep["chosen_index"] == 0 and not rep["no_safe_plan"]
    assert rep["candidates"][0]["min_safety"] > 0.95


def test_plan_no_safe_plan_is_a_warning(tmp_path, capsys):
    blocked = {"scenario": {"num_candidates": 3, "offset_scale": 0.5,
                            "agents": [{"center": [20.0, 0.0], "length": 4.0, "width": 6.0}]}}
    (tmp_path / "chosen.csv").write_text("stale")
    assert run(tmp_path, "plan", config=blocked) == 0
    assert "no safe plan" in capsys.readouterr().err
    rep = load(tmp_path / "plan_report.json")
    assert rep["no_safe_plan"] and rep["chosen_index"] is None
    assert not (tmp_path / "chosen.csv").exists()


def test_losses_expert_prediction_on_clean_straight(tmp_path):
    assert run(tmp_path, "losses", config={"prediction": "expert"}) == 0
    doc = load(tmp_path / "losses.json")
    assert doc["components"]["traj"] == 0.0
    assert doc["components"]["center"] == pytest.approx(0.0, abs=1e-9)  # projection rounding only
    assert doc["gradient_check"]["all_pass"]
    assert np.isfinite(doc["total"])


def test_losses_zero_weights_zero_total(tmp_path):
    w = {k: 0 for k in ("perc", "focal", "dice", "cls", "traj", "rank", "intent", "center")}
    assert run(tmp_path, "losses", config={"weights": w, "gradcheck_instances": 1}) == 0
    assert load(tmp_path / "losses.json")["total"] == 0.0


def test_eval_compare_uncertainty_changes_choice(tmp_path):
    # seed 5 of the ambiguity suite is one where the blind arm drifts onto the shoulder
    assert run(tmp_path, "eval", "--compare", "uncertainty", "--suite", "ambiguity", "--seeds", "6") == 0
    doc = load(tmp_path / "metrics.json")
    rows = doc["per_scenario"]
    assert len(rows) == 6 and [r["seed"] for r in rows] == list(range(6))
    assert any(r["on"]["chosen_index"] != r["off"]["chosen_index"] for r in rows)
    assert set(doc["aggregate"]) == {"on", "off"}
    assert doc["paired_sign_test"]["dac_like"]["losses"] == 0


def test_eval_plain_sweep(tmp_path):
    assert run(tmp_path, "eval", "--seeds", "2") == 0
    doc = load(tmp_path / "metrics.json")
    assert doc["aggregate"]["run"]["dac_like"]["n"] == 2
    assert "paired_sign_test" not in doc


def test_missing_scenario_file_is_io_error(tmp_path):
    assert run(tmp_path, "gen", config={"scenario": "nowhere.json"}) == 3


@pytest.mark.parametrize("config", [
    {"colour": "red"},
    {"tau_drive": 2.0},
    {"scenario": {"template": "spiral"}},
    {"weights": {"perc": -1}},
    {"uncertainty": "yes"},
    {"sweep": {"seeds": []}},
])
def test_bad_config_is_validation_error(tmp_path, config):
    assert run(tmp_path, "plan", config=config) == 2


def test_unreadable_config_json(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("value", ["0", "many", "-2"])
def test_bad_thread_count(tmp_path, monkeypatch, value):
    monkeypatch.setenv("UNCMAP_THREADS", value)
    assert run(tmp_path, "gen") == 2


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    outs = []
    for n in ("1", "3"):
        monkeypatch.setenv("UNCMAP_THREADS", n)
        out = tmp_path / n
        assert main(["eval", "--seeds", "3", "--out", str(out)] + FAST) == 0
        outs.append((out / "metrics.json").read_bytes())
    assert outs[0] == outs[1]


def test_bad_flag_value_exits_2(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["plan", "--uncertainty", "maybe"])
    assert e.value.code == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "uncmap", "gen", "--out", str(tmp_path)], capture_output=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "uncmap", "--version"], capture_output=True, text=True)
    assert r.stdout.startswith("uncmap ")
