import json

import pytest

from thinice.config import config_dump, config_load, config_parse
from thinice.errors import ConfigError

MINIMAL = {"name": "m", "dataset": {"kind": "two_moons"}, "pruning": {"grid": [{"method": "hydra", "sparsity": 0.9}]}}


def _parse(doc):
    return config_parse(json.dumps(doc))


def test_minimal_config_gets_defaults():
    cfg = _parse(MINIMAL)
    assert cfg.seed == 0 and cfg.model.preset == "mlp-2x64"
    assert cfg.dataset.eval_count == 1000 and cfg.dataset.stats_count == cfg.dataset.n_test
    assert cfg.training.momentum == 0.9 and cfg.training.weight_decay == 0.0
    assert cfg.pruning.admm.rho == 1e-2 and cfg.pruning.admm.outer_iters == 10
    assert cfg.attack.distance.steps == 100
    assert list(cfg.attack.ensemble.components) == ["apgd-ce", "apgd-dlr", "square", "fmn", "apgd-t"]


@pytest.mark.parametrize("mutate,pointer", [
    (lambda d: d["pruning"]["grid"][0].update(sparsity=1.5), "/pruning/grid/0/sparsity"),
    (lambda d: d["dataset"].update(colour="red"), "/dataset/colour"),
    (lambda d: d["dataset"].update(n_test=10, eval_n=20), "/dataset/eval_n"),
    (lambda d: d.update(training={"learning_rate": 0}), "/training/learning_rate"),
    (lambda d: d["pruning"].update(grid=[]), "/pruning/grid"),
    (lambda d: d.update(attack={"ensemble": {"components": ["fab"]}}), "/attack/ensemble/components"),
])
def test_errors_name_the_json_pointer(mutate, pointer):
    doc = json.loads(json.dumps(MINIMAL))
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        _parse(doc)
    assert str(info.value).startswith(pointer + ":")


def test_malformed_json():
    with pytest.raises(ConfigError):
        config_parse("{")


def test_round_trip():
    cfg = _parse(MINIMAL)
    again = config_parse(config_dump(cfg))
    assert again == cfg and again.digest() == cfg.digest()


def test_seed_override_changes_digest():
    cfg = _parse(MINIMAL)
    assert cfg.with_seed(7).seed == 7 and cfg.with_seed(7).digest() != cfg.digest()


def test_shipped_benchmark_config_parses(benchmark_config):
    assert benchmark_config.seed == 1
    assert {c.method for c in benchmark_config.pruning.grid} == {"magnitude", "hydra", "admm", "atmc"}
    assert all(c.sparsity == 0.9 for c in benchmark_config.pruning.grid)


def test_load_from_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(MINIMAL))
    assert config_load(path).name == "m"
