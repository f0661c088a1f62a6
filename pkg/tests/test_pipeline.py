import json
import re

import numpy as np
import pytest

from fuelmap.cli import main, schema_from_csv
from fuelmap.datamodel import read_fvr
from fuelmap.pipeline import (ConfigError, PipelineError, load_config, parse_config,
                              parse_roster, run_ablation, run_pipeline)

FAST = {"roster_l1": "random_forest_gini:n_trees=8; knn_distance:k=5",
        "roster_l2": "random_forest_gini:n_trees=8",
        "importance_repeats": "2", "iterations": "10"}


def _fast_cfg(cfg_path, dest, **extra):
    """Copy a fixture config with small rosters so runs take seconds."""
    lines = []
    over = {**FAST, **extra}
    for line in cfg_path.read_text().splitlines():
        key = line.split("=", 1)[0].strip()
        if key not in over:
            lines.append(line)
    lines += [f"{k} = {v}" for k, v in over.items()]
    out = cfg_path.parent / dest
    out.write_text("\n".join(lines) + "\n")
    return out


def test_config_requires_seed_and_rejects_junk():
    with pytest.raises(ConfigError, match="seed"):
        parse_config("manifest = m.txt\nplots = p.csv\n")
    base = "seed = 1\nmanifest = m.txt\nplots = p.csv\n"
    for bad in ("colour = red", "seed = 2", "folds = many", "split = 0.5,0.5,0.5",
                "synthesizer = gan", "just words", "pseudolabel = maybe"):
        with pytest.raises(ConfigError):
            parse_config(base + bad + "\n")
    cfg = parse_config(base + "# note\n\nsplit = 0.6, 0.2, 0.2  # inline\n", "/data")
    assert cfg.seed == 1 and cfg.split == (0.6, 0.2, 0.2)
    assert str(cfg.manifest) == "/data/m.txt"


def test_roster_parser():
    specs = parse_roster("knn_uniform:k=3; mlp:hidden=8,epochs=2 ;decision_tree")
    assert [s.family for s in specs] == ["knn_uniform", "mlp", "decision_tree"]
    assert specs[0].hyperparameters["k"] == 3 and specs[1].hyperparameters["epochs"] == 2
    for bad in ("", "svm", "knn_uniform:k", "knn_uniform:k=0", "mlp:depth=3"):
        with pytest.raises(ConfigError):
            parse_roster(bad)


def test_run_writes_artifacts_and_reruns_identically(world_dir, tmp_path):
    cfg = load_config(_fast_cfg(world_dir, "fast.cfg"))
    a = run_pipeline(cfg.with_(out=tmp_path / "a"))
    b = run_pipeline(cfg.with_(out=tmp_path / "b"))
    assert a["accuracy"] == b["accuracy"] and a["macro_f1"] == b["macro_f1"]
    files = ["run_log.txt", "fidelity.csv", "train_augmented.csv", "model.fven", "leaderboard.csv",
             "eval_report.csv", "confusion.csv", "importance.csv", "fuelmap_labels.fvr",
             "fuelmap_prob.fvr", "fuelmap_legend.csv"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert not (tmp_path / "a" / "INCOMPLETE").exists()
    log = (tmp_path / "a" / "run_log.txt").read_text()
    assert "status=complete" in log and "stage_map=ok" in log
    growth = float(re.search(r"growth_factor_pseudolabel=([\d.]+)", log).group(1))
    assert growth > 1
    board = (tmp_path / "a" / "leaderboard.csv").read_text().splitlines()
    assert board[0] == "model,test_acc,val_acc,gap" and board[-1].split(",")[0] != "model"
    assert (tmp_path / "a" / "fidelity.csv").read_text().startswith(
        "synthesizer,column_shapes,column_pair_trends,overall_quality,proximity")
    labels, _ = read_fvr(tmp_path / "a" / "fuelmap_labels.fvr")
    truth, _ = read_fvr(world_dir.parent / "truth.fvr")
    assert labels.values.shape == truth.values.shape


def test_failing_stage_leaves_marker(world_dir, tmp_path):
    cfg = load_config(_fast_cfg(world_dir, "broken.cfg")).with_(out=tmp_path / "x",
                                                                 threshold=1.0, pseudolabel=True)
    cfg = cfg.with_(plots=tmp_path / "missing.csv")
    with pytest.raises(PipelineError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "ingest"
    assert (tmp_path / "x" / "INCOMPLETE").exists()
    assert "stage_ingest=failed" in (tmp_path / "x" / "run_log.txt").read_text()


def test_ablation_reports_three_stages(world_dir):
    res = run_ablation(_fast_cfg(world_dir, "abl.cfg"))
    assert list(res.macro_f1) == ["raw", "pseudo", "synthetic"]
    assert res.rows["raw"] < res.rows["pseudo"] <= res.rows["synthetic"]
    assert res.growth_factor > 1
    assert res.to_csv().splitlines()[0] == "stage,rows,accuracy,macro_f1"


def _json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "a.csv", "b.csv", "--out", str(tmp_path)])  # --seed missing
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["map", "--bogus"])
    assert e.value.code == 2
    assert main(["ingest", str(tmp_path / "nope.csv")]) == 1


def test_cli_stepwise_flow(tmp_path, capsys):
    d = tmp_path / "w"
    assert main(["fixture", "--seed", "3", "--out", str(d), "--samples", "30", "6", "6",
                 "--separation", "6"]) == 0
    assert _json(capsys)["plots"] == 42
    assert main(["ingest", str(d / "test.csv")]) == 0
    assert _json(capsys)["dropped"] == 0
    assert main(["indices", str(d / "raster" / "manifest.txt"), "--out", str(d / "feat")]) == 0
    capsys.readouterr()
    assert main(["pseudolabel", str(d / "raster" / "manifest.txt"), str(d / "plots.csv"),
                 "--radius", "85", "--out", str(d / "pseudo.csv")]) == 0
    assert _json(capsys)["pseudo_labels"] > 0
    assert main(["augment", str(d / "val.csv"), "--seed", "1", "--out", str(d / "aug.csv")]) == 0
    capsys.readouterr()
    assert main(["synth-eval", str(d / "val.csv"), str(d / "aug.csv"), "--out",
                 str(d / "fid")]) == 0
    assert 0 <= _json(capsys)["overall_quality"] <= 100
    assert (d / "fid.txt").exists() and (d / "fid_diff.csv").exists()
    assert main(["train", str(d / "aug.csv"), str(d / "val.csv"), "--test", str(d / "test.csv"),
                 "--seed", "0", "--folds", "3", "--roster-l1", FAST["roster_l1"],
                 "--roster-l2", FAST["roster_l2"], "--out", str(d / "m")]) == 0
    capsys.readouterr()
    model = str(d / "m" / "model.fven")
    assert main(["evaluate", model, str(d / "test.csv"), "--out", str(d / "ev")]) == 0
    assert 0 <= _json(capsys)["accuracy"] <= 1
    assert main(["importance", model, str(d / "test.csv"), "--seed", "0", "--repeats", "2",
                 "--out", str(d / "imp.csv")]) == 0
    capsys.readouterr()
    assert main(["map", model, str(d / "raster" / "manifest.txt"), "--tile", "32",
                 "--out", str(d / "map")]) == 0
    assert _json(capsys)["masked"] > 0  # pixels relabelled NB
    assert schema_from_csv(d / "test.csv").names[0] == "Elevation"
