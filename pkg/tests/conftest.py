import json
import os
import time

import numpy as np
import pytest

from thinice.config import config_load, config_parse
from thinice.datasets import Dataset
from thinice.experiment import run_experiment

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BENCHMARK_CONFIG = os.path.join(ROOT, "configs", "two_moons.json")
BENCHMARK_RECORD = os.path.join(ROOT, "tests", "benchmark_record.json")

_CRITERIA = {}


class Criterion:
    """Context manager that records one acceptance criterion as PASS or FAIL."""

    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc is None else f"{self.detail} {exc}".strip()
        _CRITERIA[self.number] = (status, self.title, detail.replace("\n", " "))
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title} | {detail}")


@pytest.fixture(scope="session")
def benchmark_config():
    return config_load(BENCHMARK_CONFIG)


@pytest.fixture(scope="session")
def benchmark_record():
    with open(BENCHMARK_RECORD) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def benchmark_run(benchmark_config, tmp_path_factory):
    """The frozen two-moons benchmark, run once per session; returns (out_dir, manifest, seconds)."""
    out = str(tmp_path_factory.mktemp("benchmark"))
    start = time.perf_counter()
    manifest = run_experiment(benchmark_config, out)
    return out, manifest, time.perf_counter() - start


def tiny_config(out_dir, **overrides):
    """A seconds-scale experiment config for orchestration tests."""
    doc = {
        "name": "tiny",
        "seed": 3,
        "dataset": {"kind": "two_moons", "n_train": 120, "n_test": 60, "noise": 0.1, "eval_n": 40},
        "training": {"epochs": 3, "adversarial": {"eps": 0.03, "steps": 3}},
        "pruning": {
            "grid": [{"method": "magnitude", "sparsity": 0.5}, {"method": "hydra", "sparsity": 0.9}],
            "hydra": {"score_epochs": 1},
            "finetune": {"epochs": 1, "learning_rate": 0.01},
        },
        "attack": {"eps": 0.03, "ensemble": {"apgd_steps": 5, "apgd_restarts": 1, "square_queries": 20},
                   "distance": {"steps": 30}},
        "output_dir": str(out_dir),
    }
    for key, value in overrides.items():
        node = doc
        *path, last = key.split(".")
        for p in path:
            node = node.setdefault(p, {})
        node[last] = value
    return config_parse(json.dumps(doc))


@pytest.fixture
def make_tiny_config():
    return tiny_config


def image_dataset(n=48, shape=(1, 8, 8), classes=3, seed=0):
    """Random tiny images whose class is encoded in the mean brightness of a stripe."""
    g = np.random.default_rng(seed)
    y = np.arange(n) % classes
    x = g.uniform(0, 0.3, size=(n,) + shape)
    band = shape[1] // classes
    for i, c in enumerate(y):
        x[i, :, c * band:(c + 1) * band, :] += 0.6
    return Dataset(np.clip(x, 0, 1).astype(np.float32), y.astype(np.int64), classes, "file")


@pytest.fixture
def images():
    return image_dataset()
