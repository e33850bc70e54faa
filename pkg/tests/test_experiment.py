import csv
import json
import os

import pytest

from thinice import pruning
from thinice.errors import NumericError
from thinice.experiment import report_render, run_experiment, verify_manifest

GRID = [{"method": m, "sparsity": s} for m in ("magnitude", "hydra") for s in (0.5, 0.9)]


def _csvs(out):
    found = {}
    for d, _, files in os.walk(out):
        for f in files:
            if f.endswith(".csv"):
                path = os.path.join(d, f)
                found[os.path.relpath(path, out)] = open(path, "rb").read()
    return found


@pytest.fixture(scope="module")
def grid_run(tmp_path_factory):
    from conftest import tiny_config

    out = tmp_path_factory.mktemp("grid")
    cfg = tiny_config(out, **{"pruning.grid": GRID, "reported_baselines": {"magnitude/0.5": {"rep_acc": 90.0,
                                                                                             "rep_rob": 80.0}}})
    return cfg, str(out), run_experiment(cfg)


def test_grid_accounting(grid_run):
    cfg, out, manifest = grid_run
    assert manifest["status"] == "complete"
    assert os.path.exists(os.path.join(out, "dense", "manifest.json"))
    pruned = [c for c in os.listdir(os.path.join(out, "cells"))
              if os.path.exists(os.path.join(out, "cells", c, "pruned", "manifest.json"))]
    assert sorted(pruned) == sorted(c.cell_id for c in cfg.pruning.grid) and len(pruned) == 4


def test_every_cell_uses_the_same_evaluation_subset(grid_run):
    _, out, _ = grid_run
    id_sets = []
    for cell in os.listdir(os.path.join(out, "cells")):
        with open(os.path.join(out, "cells", cell, "outcomes.csv")) as fh:
            id_sets.append(sorted({int(r["sample_id"]) for r in csv.DictReader(fh)}))
    assert len(id_sets) == 4 and all(ids == id_sets[0] for ids in id_sets) and len(id_sets[0]) == 40


def test_manifest_has_no_orphans(grid_run):
    _, out, manifest = grid_run
    assert verify_manifest(os.path.join(out, "manifest.json")) == []
    assert manifest["tool_version"] and manifest["config_hash"]
    assert all("seconds" in s for s in manifest["stages"].values())


def test_report_contents(grid_run):
    cfg, out, _ = grid_run
    text = open(os.path.join(out, "report.txt")).read()
    assert cfg.digest() in text and f"seed: {cfg.seed}" in text and "FMN stands in for FAB" in text
    rows = {(r["method"], r["sparsity"]): r for r in csv.DictReader(open(os.path.join(out, "robustness_table.csv")))}
    with_base, without = rows[("magnitude", "50.00")], rows[("hydra", "90.00")]
    assert with_base["rep_rob"] == "80.00"
    assert float(with_base["drop"]) == pytest.approx(80.0 - float(with_base["aa_rob"]), abs=0.006)
    assert without["rep_rob"] == without["drop"] == ""


def test_report_render_is_idempotent(grid_run):
    _, out, _ = grid_run
    before = _csvs(out)
    report_render(os.path.join(out, "manifest.json"))
    assert _csvs(out) == before
    assert verify_manifest(os.path.join(out, "manifest.json")) == []


def test_rerun_reuses_every_stage(grid_run):
    cfg, out, _ = grid_run
    before = _csvs(out)
    manifest = run_experiment(cfg, out)
    assert all(s["reused"] for s in manifest["stages"].values())
    assert _csvs(out) == before


def test_tampered_artifact_is_detected_and_rebuilt(grid_run, tmp_path):
    cfg, out, _ = grid_run
    path = os.path.join(out, "cells", "hydra-05000", "outcomes.csv")
    original = open(path, "rb").read()
    with open(path, "ab") as fh:
        fh.write(b"junk\n")
    with open(os.path.join(out, "stray.txt"), "w") as fh:
        fh.write("x")
    problems = verify_manifest(os.path.join(out, "manifest.json"))
    assert "digest mismatch: cells/hydra-05000/outcomes.csv" in problems and "unlisted: stray.txt" in problems
    os.remove(os.path.join(out, "stray.txt"))
    manifest = run_experiment(cfg, out)
    assert not manifest["stages"]["hydra-05000:evaluate"]["reused"]
    assert manifest["stages"]["hydra-05000:prune"]["reused"]
    assert open(path, "rb").read() == original


def test_resume_after_prune_does_not_prune_again(make_tiny_config, tmp_path):
    cfg = make_tiny_config(tmp_path)
    first = run_experiment(cfg, until="prune")
    assert first["status"] == "complete" and "magnitude-05000:evaluate" not in first["stages"]
    ck = os.path.join(str(tmp_path), "cells", "magnitude-05000", "pruned", "param_0.tnsr")
    stamp = os.stat(ck).st_mtime_ns
    second = run_experiment(cfg)
    assert second["stages"]["magnitude-05000:prune"]["reused"]
    assert not second["stages"]["magnitude-05000:evaluate"]["reused"]
    assert os.stat(ck).st_mtime_ns == stamp
    assert os.path.exists(os.path.join(str(tmp_path), "report.txt"))


def test_failed_cell_is_isolated(make_tiny_config, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericError("scores diverged")

    monkeypatch.setattr(pruning, "hydra_prune", explode)
    manifest = run_experiment(make_tiny_config(tmp_path))
    cells = manifest["cells"]
    assert cells["hydra-09000"]["status"] == "failed" and cells["hydra-09000"]["numeric"]
    assert cells["magnitude-05000"]["status"] == "done"
    assert manifest["status"] == "failed"
    assert not os.path.exists(os.path.join(str(tmp_path), "cells", "hydra-09000", "pruned"))
    assert "hydra-09000 failed" in open(os.path.join(str(tmp_path), "report.txt")).read()
    assert verify_manifest(os.path.join(str(tmp_path), "manifest.json")) == []


def test_parallel_matches_serial(make_tiny_config, tmp_path, monkeypatch):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    run_experiment(make_tiny_config(serial))
    monkeypatch.setenv("THINICE_THREADS", "2")
    run_experiment(make_tiny_config(parallel))
    assert _csvs(str(serial)) == _csvs(str(parallel))


def test_config_change_reruns_dependent_stages_only(make_tiny_config, tmp_path):
    run_experiment(make_tiny_config(tmp_path))
    changed = make_tiny_config(tmp_path, **{"pruning.finetune": {"epochs": 2, "learning_rate": 0.01}})
    manifest = run_experiment(changed)
    stages = manifest["stages"]
    assert stages["data"]["reused"] and stages["dense"]["reused"]
    assert not stages["magnitude-05000:prune"]["reused"]
    with open(os.path.join(str(tmp_path), "manifest.json")) as fh:
        assert json.load(fh)["config_hash"] == changed.digest()
