"""Experiment orchestration: resumable stages, per-cell isolation, manifest and reports.

Output layout under the run directory::

    config.json                 resolved config snapshot
    data/                       train/test TNSR files, eval_ids.txt, stats_ids.txt
    dense/                      dense checkpoint
    dense_history.csv           pretraining loss history
    dense_distances.csv         signed FMN distances on the stats subset
    dense_eval/                 ensemble outcomes and summary for the dense model
    boundary_grid_dense.csv     (2-D inputs only)
    cells/<cell>/               pruned/, round_<r>/, pipeline_log.csv, outcomes.csv,
                                eval.json, records.csv, scatter.csv, boundary_grid_pruned.csv
    robustness_table.csv, stats_table.csv, report.txt
    manifest.json

Each stage has a key: the sha256 of its config subsection together with the
keys of the stages it reads from. A stage whose key and output digests
match the previous manifest is skipped, so reruns and resumed runs reuse work.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext

import numpy as np

from . import __version__, datasets, rng
from .analysis import (SampleRecord, attach_distances, boundary_distance_signed, boundary_grid_export,
                       partition_populations, robustness_row, scatter_export, stats_row, write_csv)
from .analysis.populations import PopulationLabel
from .analysis.reports import ROBUSTNESS_COLUMNS, STATS_COLUMNS
from .attacks import OUTCOME_COLUMNS, ensemble_evaluate, write_outcomes_csv
from .config import ExperimentConfig
from .errors import NumericError, StageError
from .nn import build_preset, load_checkpoint, save_checkpoint
from .pruning import PipelinePlan, PruneConfig, run_pipeline
from .training import train_adversarial, train_standard

logger = logging.getLogger(__name__)

STAGE_ORDER = ("data", "dense", "prune", "evaluate", "analyze", "report")
RECORD_COLUMNS = ["sample_id", "true_label", "dense_pred", "pruned_pred", "population", "dense_logit_loss",
                  "epsilon_signed", "converged"]


def thread_count():
    raw = os.environ.get("THINICE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"THINICE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"THINICE_THREADS must be a positive integer, got {raw!r}")
    return n


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _expand(root, rel):
    """Relative paths of the files behind ``rel`` (a file or a directory)."""
    full = os.path.join(root, rel)
    if os.path.isdir(full):
        out = []
        for d, _, files in os.walk(full):
            out += [os.path.relpath(os.path.join(d, f), root) for f in files]
        return sorted(out)
    return [rel] if os.path.exists(full) else []


def _remove(root, rel):
    full = os.path.join(root, rel)
    if os.path.isdir(full):
        shutil.rmtree(full)
    elif os.path.exists(full):
        os.remove(full)


def _write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_ids(path, ids):
    with open(path, "w") as fh:
        fh.write("\n".join(str(int(i)) for i in ids) + "\n")


def _read_ids(path):
    with open(path) as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


def run_dir(cfg, out_dir=None):
    return os.path.abspath(out_dir or cfg.output_dir or os.path.join("runs", cfg.name))


class Runner:
    """Runs one experiment config into one output directory."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None):
        self.cfg = cfg
        self.out = run_dir(cfg, out_dir)
        self.manifest_path = os.path.join(self.out, "manifest.json")
        self.lock = threading.Lock()
        prior = {}
        if os.path.exists(self.manifest_path):
            try:
                with open(self.manifest_path) as fh:
                    prior = json.load(fh)
            except (OSError, ValueError):
                logger.warning("ignoring unreadable manifest at %s", self.manifest_path)
        self.previous = prior.get("stages", {})
        # entries from earlier partial runs stay listed; each stage is re-keyed before reuse anyway
        self.stages = dict(self.previous)
        self.cells = dict(prior.get("cells", {}))
        self._cache = {}

    # ------------------------------------------------------------ bookkeeping

    def _stage(self, name, key_obj, outputs, fn):
        """Run ``fn`` unless a previous run recorded the same key and intact outputs. Returns the key."""
        key = _hash({"stage": name, "version": __version__, **key_obj})
        prev = self.previous.get(name)
        if prev and prev.get("key") == key and prev.get("status") == "done":
            files = prev.get("outputs", {})
            intact = files and all(
                os.path.exists(os.path.join(self.out, f)) and file_digest(os.path.join(self.out, f)) == d
                for f, d in files.items())
            if intact:
                with self.lock:
                    self.stages[name] = {**prev, "reused": True}
                self._save_manifest(status="running")
                return key
        for rel in outputs:
            _remove(self.out, rel)
        start = time.perf_counter()
        try:
            fn()
        except BaseException:
            for rel in outputs:
                _remove(self.out, rel)
            with self.lock:
                self.stages[name] = {"key": key, "status": "failed", "outputs": {}}
            self._save_manifest(status="running")
            raise
        files = {f: file_digest(os.path.join(self.out, f)) for rel in outputs for f in _expand(self.out, rel)}
        with self.lock:
            self.stages[name] = {"key": key, "status": "done", "seconds": round(time.perf_counter() - start, 3),
                                 "outputs": files, "reused": False}
        self._save_manifest(status="running")
        return key

    def _save_manifest(self, status):
        with self.lock:
            manifest = {
                "tool_version": __version__,
                "config_hash": self.cfg.digest(),
                "config": json.loads(self.cfg.snapshot()),
                "status": status,
                "stages": self.stages,
                "cells": self.cells,
                "artifacts": {},
            }
            if status != "running":
                manifest["artifacts"] = self._artifacts()
            _write_json(self.manifest_path, manifest)
        return manifest

    def _artifacts(self):
        out = {}
        for d, _, files in os.walk(self.out):
            for f in files:
                rel = os.path.relpath(os.path.join(d, f), self.out)
                if rel != "manifest.json":
                    out[rel] = file_digest(os.path.join(self.out, rel))
        return dict(sorted(out.items()))

    # ------------------------------------------------------------ data

    def _data_stage(self):
        c = self.cfg.dataset
        key_obj = {"dataset": c.model_dump(mode="json"), "seed": self.cfg.seed}
        outputs = ["data"]

        def run():
            os.makedirs(os.path.join(self.out, "data"))
            if c.kind == "file":
                train = datasets.load_files(c.train_inputs, c.train_labels, c.classes)
                test = datasets.load_files(c.test_inputs, c.test_labels, c.classes)
                if len(test) < c.eval_count or len(test) < c.stats_count:
                    raise ValueError("test split is smaller than eval_n or stats_n")
            else:
                train, test = datasets.train_test(c.kind, c.n_train, c.n_test, c.noise, self.cfg.seed, c.classes)
            d = os.path.join(self.out, "data")
            datasets.save_files(train, os.path.join(d, "train_x.tnsr"), os.path.join(d, "train_y.tnsr"))
            datasets.save_files(test, os.path.join(d, "test_x.tnsr"), os.path.join(d, "test_y.tnsr"))
            n_test = len(test)
            # one fixed evaluation subset and one statistics subset, shared by every grid cell
            eval_ids = np.sort(rng.stream(self.cfg.seed, rng.SPLIT, 0).permutation(n_test)[:c.eval_count])
            stats_ids = np.sort(rng.stream(self.cfg.seed, rng.SPLIT, 1).permutation(n_test)[:c.stats_count])
            _write_ids(os.path.join(d, "eval_ids.txt"), eval_ids)
            _write_ids(os.path.join(d, "stats_ids.txt"), stats_ids)

        return self._stage("data", key_obj, outputs, run)

    def _load_data(self):
        if "data" not in self._cache:
            d = os.path.join(self.out, "data")
            classes = self.cfg.dataset.classes
            train = datasets.load_files(os.path.join(d, "train_x.tnsr"), os.path.join(d, "train_y.tnsr"), classes)
            test = datasets.load_files(os.path.join(d, "test_x.tnsr"), os.path.join(d, "test_y.tnsr"), classes)
            classes = max(train.classes, test.classes)
            train.classes = test.classes = classes
            self._cache["data"] = (train, test, _read_ids(os.path.join(d, "eval_ids.txt")),
                                   _read_ids(os.path.join(d, "stats_ids.txt")))
        return self._cache["data"]

    # ------------------------------------------------------------ dense model

    def _dense_stage(self, data_key):
        key_obj = {"data": data_key, "model": self.cfg.model.model_dump(mode="json"),
                   "training": self.cfg.training.model_dump(mode="json"), "seed": self.cfg.seed}
        outputs = ["dense", "dense_history.csv", "boundary_grid_dense.csv"]

        def run():
            train, _, _, _ = self._load_data()
            shape = self.cfg.model.input_shape or list(train.x.shape[1:])
            net = build_preset(self.cfg.model.preset, train.classes, rng.derive_seed(self.cfg.seed, "init"), shape)
            tcfg = self.cfg.training.model_copy(update={"seed": rng.derive_seed(self.cfg.seed, "pretrain")})
            trainer = train_adversarial if tcfg.adversarial is not None else train_standard
            dense, hist = trainer(net, train, tcfg)
            save_checkpoint(dense, os.path.join(self.out, "dense"), provenance=f"{self.cfg.name} dense")
            hist.write_csv(os.path.join(self.out, "dense_history.csv"))
            if tuple(dense.input_shape) == (2,):
                boundary_grid_export(dense, os.path.join(self.out, "boundary_grid_dense.csv"))

        return self._stage("dense", key_obj, outputs, run)

    def _eval_cfg(self):
        ens = self.cfg.attack.ensemble
        comps = list(ens.components)
        if "pgd" not in comps:
            comps.append("pgd")
        return ens.model_copy(update={"components": comps, "seed": rng.derive_seed(self.cfg.seed, "attack")})

    def _evaluate(self, net, folder):
        """Ensemble (plus PGD) on the eval subset; writes outcomes.csv and eval.json into ``folder``."""
        _, test, eval_ids, _ = self._load_data()
        cfg = self._eval_cfg()
        res = ensemble_evaluate(net, test.x[eval_ids], test.y[eval_ids], self.cfg.attack.eps, cfg=cfg,
                                sample_ids=eval_ids)
        rows = list(res.rows())
        total_queries = sum(o.queries for o in res.outcomes.values())
        for i, (sid, who) in enumerate(zip(res.sample_ids, res.broken_by)):
            norm = 0.0 if who in ("", "clean") else float(res.outcomes[who].delta_norm[i])
            rows.append({"sample_id": int(sid), "attack": "worst-case", "success": int(not res.robust[i]),
                         "delta_norm": f"{norm:.6g}", "queries": int(total_queries[i]), "best_loss": ""})
        write_outcomes_csv(os.path.join(folder, "outcomes.csv"), rows)
        ensemble_only = res.clean_correct.copy()
        for name, out in res.outcomes.items():
            if name != "pgd":
                ensemble_only &= ~out.success
        summary = {
            "n": int(len(res.sample_ids)),
            "clean_acc": 100.0 * res.clean_accuracy,
            "aa_rob": 100.0 * res.robust_accuracy,
            "pgd_rob": 100.0 * res.component_robust_accuracy("pgd"),
            "ensemble_only_rob": 100.0 * float(ensemble_only.mean()),
            "components": list(res.outcomes),
            "skipped": [list(s) for s in res.skipped],
            "substituted": res.substituted,
            "eps": self.cfg.attack.eps,
        }
        _write_json(os.path.join(folder, "eval.json"), summary)
        return summary

    def _dense_eval_stage(self, dense_key):
        key_obj = {"dense": dense_key, "attack": self.cfg.attack.model_dump(mode="json"),
                   "eval": self._eval_cfg().model_dump(mode="json")}

        def run():
            folder = os.path.join(self.out, "dense_eval")
            os.makedirs(folder)
            self._evaluate(load_checkpoint(os.path.join(self.out, "dense")), folder)

        return self._stage("dense-evaluate", key_obj, ["dense_eval"], run)

    def _distance_stage(self, dense_key):
        key_obj = {"dense": dense_key, "distance": self.cfg.attack.distance.model_dump(mode="json")}

        def run():
            _, test, _, stats_ids = self._load_data()
            dense = load_checkpoint(os.path.join(self.out, "dense"))
            dcfg = self.cfg.attack.distance
            eps, conv = boundary_distance_signed(dense, test.x[stats_ids], test.y[stats_ids], dcfg.norm, dcfg)
            with open(os.path.join(self.out, "dense_distances.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["sample_id", "epsilon_signed", "converged"])
                for sid, e, c in zip(stats_ids, eps, conv):
                    w.writerow([int(sid), repr(float(e)), int(bool(c))])

        return self._stage("dense-distances", key_obj, ["dense_distances.csv"], run)

    # ------------------------------------------------------------ grid cells

    def _plan(self, cell):
        p = self.cfg.pruning
        prune_cfg = PruneConfig(method=cell.method, target_sparsity=cell.sparsity, locality=p.locality,
                                hydra=p.hydra, admm=p.admm, atmc=p.atmc,
                                adversarial=p.adversarial or self.cfg.training.adversarial,
                                batch_size=self.cfg.training.batch_size,
                                seed=rng.derive_seed(self.cfg.seed, "prune"))
        finetune = p.finetune
        if finetune.adversarial is None and self.cfg.training.adversarial is not None:
            finetune = finetune.model_copy(update={"adversarial": self.cfg.training.adversarial})
        # every cell fine-tunes with the same batch order and attack seeds, so cells differ only by their masks
        finetune = finetune.model_copy(update={"seed": rng.derive_seed(self.cfg.seed, "finetune")})
        return PipelinePlan(prune=prune_cfg, finetune=finetune, schedule=cell.schedule)

    def _cell(self, cell, dense_key, dist_key, until):
        cid = cell.cell_id
        rel = os.path.join("cells", cid)
        folder = os.path.join(self.out, rel)
        stage = "prune"
        try:
            plan = self._plan(cell)
            key_obj = {"dense": dense_key, "plan": plan.model_dump(mode="json")}

            def prune_run():
                os.makedirs(folder, exist_ok=True)
                train, _, _, _ = self._load_data()
                dense = load_checkpoint(os.path.join(self.out, "dense"))
                run_pipeline(dense, train, plan, folder, pretrained=True,
                             dense_path=os.path.join(self.out, "dense"))

            prune_out = [os.path.join(rel, "pruned"), os.path.join(rel, "pipeline_log.csv")]
            prune_out += [os.path.join(rel, f"round_{r}") for r in range(1, len(plan.rounds()) + 1)]
            prune_key = self._stage(f"{cid}:prune", key_obj, prune_out, prune_run)
            if until == "prune":
                return self._mark(cid, "done", until)

            stage = "evaluate"
            eval_key = self._stage(
                f"{cid}:evaluate",
                {"prune": prune_key, "eval": self._eval_cfg().model_dump(mode="json"), "eps": self.cfg.attack.eps},
                [os.path.join(rel, "outcomes.csv"), os.path.join(rel, "eval.json")],
                lambda: self._evaluate(load_checkpoint(os.path.join(folder, "pruned")), folder))
            if until == "evaluate":
                return self._mark(cid, "done", until)

            stage = "analyze"
            self._stage(
                f"{cid}:analyze", {"prune": prune_key, "distances": dist_key, "eval": eval_key},
                [os.path.join(rel, "records.csv"), os.path.join(rel, "scatter.csv"),
                 os.path.join(rel, "boundary_grid_pruned.csv")],
                lambda: self._analyze(folder))
            return self._mark(cid, "done", until)
        except (StageError, NumericError, ValueError, ArithmeticError, OSError, AssertionError) as exc:
            logger.error("cell %s failed in %s: %s", cid, stage, exc)
            return self._mark(cid, "failed", until, stage=stage, error=str(exc), numeric=isinstance(
                exc.cause if isinstance(exc, StageError) else exc, NumericError))

    def _mark(self, cid, status, until, **extra):
        with self.lock:
            self.cells[cid] = {"status": status, "through": until, **extra}
        self._save_manifest(status="running")
        return status

    def _analyze(self, folder):
        _, test, _, stats_ids = self._load_data()
        dense = load_checkpoint(os.path.join(self.out, "dense"))
        pruned = load_checkpoint(os.path.join(folder, "pruned"))
        records = partition_populations(dense, pruned, test.x[stats_ids], test.y[stats_ids], stats_ids)
        eps, conv = _read_distances(os.path.join(self.out, "dense_distances.csv"), stats_ids)
        attach_distances(records, eps, conv)
        write_records(os.path.join(folder, "records.csv"), records)
        scatter_export(records, os.path.join(folder, "scatter.csv"))
        if tuple(pruned.input_shape) == (2,):
            boundary_grid_export(pruned, os.path.join(folder, "boundary_grid_pruned.csv"))

    # ------------------------------------------------------------ driver

    def run(self, until="report"):
        if until not in STAGE_ORDER:
            raise ValueError(f"unknown stage {until!r}; expected one of {STAGE_ORDER}")
        os.makedirs(self.out, exist_ok=True)
        with open(os.path.join(self.out, "config.json"), "w") as fh:
            fh.write(json.dumps(json.loads(self.cfg.snapshot()), indent=2, sort_keys=True) + "\n")
        threads = thread_count()
        try:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(limits=threads)
        except ImportError:  # pragma: no cover - declared dependency
            limiter = nullcontext()
        with limiter:
            data_key = self._data_stage()
            if until != "data":
                dense_key = self._dense_stage(data_key)
                dist_key = None
                if STAGE_ORDER.index(until) >= STAGE_ORDER.index("evaluate"):
                    self._dense_eval_stage(dense_key)
                if STAGE_ORDER.index(until) >= STAGE_ORDER.index("analyze"):
                    dist_key = self._distance_stage(dense_key)
                if until != "dense":
                    cells = self.cfg.pruning.grid
                    if threads > 1 and len(cells) > 1:
                        with ThreadPoolExecutor(max_workers=threads) as pool:
                            list(pool.map(lambda c: self._cell(c, dense_key, dist_key, until), cells))
                    else:
                        for c in cells:
                            self._cell(c, dense_key, dist_key, until)
            if until == "report":
                render_tables(self.out, self.cfg, self.cells)
        failed = [c for c, v in self.cells.items() if v["status"] == "failed"]
        return self._save_manifest(status="failed" if failed else "complete")


# ---------------------------------------------------------------- persistence helpers

def write_records(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.sample_id, r.true_label, r.dense_pred, r.pruned_pred, str(r.population),
                        repr(r.dense_logit_loss), repr(r.epsilon_signed), int(r.converged)])


def read_records(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(SampleRecord(int(row["sample_id"]), int(row["true_label"]), int(row["dense_pred"]),
                                    int(row["pruned_pred"]), PopulationLabel(row["population"]),
                                    float(row["dense_logit_loss"]), float(row["epsilon_signed"]),
                                    bool(int(row["converged"]))))
    return out


def _read_distances(path, ids):
    table = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            table[int(row["sample_id"])] = (float(row["epsilon_signed"]), bool(int(row["converged"])))
    eps = np.array([table[int(i)][0] for i in ids])
    conv = np.array([table[int(i)][1] for i in ids])
    return eps, conv


# ---------------------------------------------------------------- reports

def _cell_label(cfg, method):
    return "atmc-lite" if method == "atmc" else method


def render_tables(out, cfg: ExperimentConfig, cells=None):
    """Write robustness_table.csv, stats_table.csv and report.txt from the cell artifacts."""
    rob_rows, stat_rows, notes = [], [], []
    network = cfg.model.preset
    dense_eval = os.path.join(out, "dense_eval", "eval.json")
    if os.path.exists(dense_eval):
        with open(dense_eval) as fh:
            e = json.load(fh)
        base = cfg.reported_baselines.get("dense/0")
        rob_rows.append(robustness_row("dense", 0.0, network, e["clean_acc"], e["aa_rob"],
                                       rep_acc=base.rep_acc if base else None,
                                       rep_rob=base.rep_rob if base else None, pgd_rob=e["pgd_rob"]))
    nonconv = {}
    for cell in cfg.pruning.grid:
        folder = os.path.join(out, "cells", cell.cell_id)
        status = (cells or {}).get(cell.cell_id, {}).get("status", "unknown")
        eval_path = os.path.join(folder, "eval.json")
        if status == "failed":
            notes.append(f"cell {cell.cell_id} failed: {(cells or {})[cell.cell_id].get('error', '')}")
            continue
        if os.path.exists(eval_path):
            with open(eval_path) as fh:
                e = json.load(fh)
            base = cfg.reported_baselines.get(cell.key)
            rob_rows.append(robustness_row(_cell_label(cfg, cell.method), cell.sparsity, network, e["clean_acc"],
                                           e["aa_rob"], rep_acc=base.rep_acc if base else None,
                                           rep_rob=base.rep_rob if base else None, pgd_rob=e["pgd_rob"]))
        rec_path = os.path.join(folder, "records.csv")
        if os.path.exists(rec_path):
            records = read_records(rec_path)
            row = stats_row(records, _cell_label(cfg, cell.method), cell.sparsity, network)
            nonconv[cell.cell_id] = row["excluded_nonconverged"]
            stat_rows.append(row)
    write_csv(os.path.join(out, "robustness_table.csv"), ROBUSTNESS_COLUMNS, rob_rows)
    write_csv(os.path.join(out, "stats_table.csv"), STATS_COLUMNS, stat_rows)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(report_text(cfg, rob_rows, stat_rows, nonconv, notes))


def _table(columns, rows):
    cells = [columns] + [[str(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def report_text(cfg, rob_rows, stat_rows, nonconv, notes):
    ens = cfg.attack.ensemble
    lines = [
        f"experiment: {cfg.name}",
        f"config sha256: {cfg.digest()}",
        f"tool version: {__version__}",
        f"seed: {cfg.seed}",
        f"dataset: {cfg.dataset.kind} (train {cfg.dataset.n_train}, test {cfg.dataset.n_test}, "
        f"eval_n {cfg.dataset.eval_count}, stats_n {cfg.dataset.stats_count}, noise {cfg.dataset.noise})",
        f"model: {cfg.model.preset}",
        "",
        f"Robustness (eps = {cfg.attack.eps}, {ens.norm})",
        "ensemble: " + ", ".join(ens.components) + "; FMN stands in for FAB as the minimum-norm member",
        "on two-class data apgd-dlr runs with the logit-margin loss and the targeted run is skipped",
        "aa_rob is the worst case over the ensemble and the PGD run; pgd_rob is PGD alone",
        "Rep. columns are operator-supplied external claims; Drop = Rep. Rob - A.A. Rob",
        "",
        _table(ROBUSTNESS_COLUMNS, rob_rows) if rob_rows else "(no evaluated cells)",
        "",
        f"Sample populations and boundary distances (FMN {cfg.attack.distance.norm}, two-sided Mann-Whitney p)",
        "",
        _table(STATS_COLUMNS, stat_rows) if stat_rows else "(no analysed cells)",
        "",
        "FMN non-convergence (excluded from statistics): "
        + (", ".join(f"{k}: {v}" for k, v in sorted(nonconv.items())) if nonconv else "none recorded"),
    ]
    lines += notes
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, out_dir=None, until="report"):
    """Run (or resume) the experiment and return the manifest dict."""
    return Runner(cfg, out_dir).run(until)


def report_render(manifest_path):
    """Re-render tables and report.txt from a manifest and the artifacts next to it."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    cfg = ExperimentConfig.model_validate(manifest["config"])
    out = os.path.dirname(os.path.abspath(manifest_path))
    render_tables(out, cfg, manifest.get("cells"))
    manifest["artifacts"] = {}
    for d, _, files in os.walk(out):
        for f in files:
            rel = os.path.relpath(os.path.join(d, f), out)
            if rel != "manifest.json":
                manifest["artifacts"][rel] = file_digest(os.path.join(out, rel))
    manifest["artifacts"] = dict(sorted(manifest["artifacts"].items()))
    _write_json(manifest_path, manifest)
    return os.path.join(out, "report.txt")


def verify_manifest(manifest_path):
    """List of problems: missing or altered artifacts, and files the manifest does not list."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    out = os.path.dirname(os.path.abspath(manifest_path))
    problems = []
    listed = manifest.get("artifacts", {})
    for rel, digest in listed.items():
        path = os.path.join(out, rel)
        if not os.path.exists(path):
            problems.append(f"missing: {rel}")
        elif file_digest(path) != digest:
            problems.append(f"digest mismatch: {rel}")
    for d, _, files in os.walk(out):
        for f in files:
            rel = os.path.relpath(os.path.join(d, f), out)
            if rel != "manifest.json" and rel not in listed:
                problems.append(f"unlisted: {rel}")
    return problems
