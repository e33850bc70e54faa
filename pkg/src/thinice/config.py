"""Experiment configuration: strict JSON schema with JSON-pointer error paths."""

from __future__ import annotations

import hashlib
import json
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .attacks.ensemble import EnsembleConfig
from .attacks.fmn import FmnConfig
from .errors import ConfigError
from .pruning import AdmmSettings, AtmcSettings, HydraSettings
from .training import AdversarialSettings, TrainConfig

DEFAULT_EVAL_N = 1000


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetConfig(_Strict):
    """``eval_n`` defaults to min(1000, n_test) and ``stats_n`` to n_test."""

    kind: Literal["two_moons", "circles", "blobs", "file"] = "two_moons"
    n_train: int = Field(1000, ge=2)
    n_test: int = Field(2000, ge=2)
    noise: float = Field(0.0, ge=0)
    classes: Optional[int] = Field(None, ge=2)
    eval_n: Optional[int] = Field(None, ge=1)
    stats_n: Optional[int] = Field(None, ge=1)
    train_inputs: Optional[str] = None
    train_labels: Optional[str] = None
    test_inputs: Optional[str] = None
    test_labels: Optional[str] = None

    @field_validator("eval_n", "stats_n")
    @classmethod
    def _within_test(cls, v, info):
        n_test = info.data.get("n_test")
        if v is not None and n_test is not None and v > n_test:
            raise ValueError(f"must not exceed n_test ({n_test})")
        return v

    @model_validator(mode="after")
    def _files(self):
        paths = (self.train_inputs, self.train_labels, self.test_inputs, self.test_labels)
        if self.kind == "file" and not all(paths):
            raise ValueError("kind 'file' needs train_inputs, train_labels, test_inputs and test_labels")
        return self

    @property
    def eval_count(self):
        return self.eval_n if self.eval_n is not None else min(DEFAULT_EVAL_N, self.n_test)

    @property
    def stats_count(self):
        return self.stats_n if self.stats_n is not None else self.n_test


class ModelConfig(_Strict):
    preset: Literal["mlp-2x64", "cnn-tiny"] = "mlp-2x64"
    input_shape: Optional[List[int]] = None


class GridCell(_Strict):
    method: Literal["magnitude", "hydra", "admm", "atmc"]
    sparsity: float = Field(ge=0, lt=1)
    schedule: List[float] = Field(default_factory=list)

    @property
    def cell_id(self):
        return f"{self.method}-{round(self.sparsity * 10000):05d}"

    @property
    def key(self):
        return f"{self.method}/{self.sparsity:g}"


class PruningBlock(_Strict):
    grid: List[GridCell] = Field(min_length=1)
    locality: Optional[Literal["global", "local"]] = None
    hydra: HydraSettings = Field(default_factory=HydraSettings)
    admm: AdmmSettings = Field(default_factory=AdmmSettings)
    atmc: AtmcSettings = Field(default_factory=AtmcSettings)
    adversarial: Optional[AdversarialSettings] = None
    finetune: TrainConfig = Field(default_factory=lambda: TrainConfig(epochs=10, learning_rate=0.01))


class AttackBlock(_Strict):
    eps: float = Field(0.03, ge=0)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    distance: FmnConfig = Field(default_factory=FmnConfig)


class Baseline(_Strict):
    rep_acc: Optional[float] = None
    rep_rob: Optional[float] = None


class ExperimentConfig(_Strict):
    name: str = Field(min_length=1)
    seed: int = Field(0, ge=0)
    dataset: DatasetConfig
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    pruning: PruningBlock
    attack: AttackBlock = Field(default_factory=AttackBlock)
    reported_baselines: Dict[str, Baseline] = Field(default_factory=dict)
    output_dir: Optional[str] = None

    def snapshot(self):
        """Canonical JSON of the fully resolved config."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.snapshot().encode()).hexdigest()

    def with_seed(self, seed):
        return ExperimentConfig.model_validate({**self.model_dump(mode="json"), "seed": seed})


def _pointer(loc):
    parts = [str(p).replace("~", "~0").replace("/", "~1") for p in loc]
    return "/" + "/".join(parts)


def _format(err: ValidationError):
    lines = []
    for e in err.errors():
        loc = [p for p in e["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
        lines.append(f"{_pointer(loc)}: {e['msg']}")
    return "; ".join(lines)


def config_parse(text):
    """Parse and validate a JSON experiment config; errors carry JSON-pointer paths."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("/: config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc)) from exc


def config_load(path):
    with open(path) as fh:
        return config_parse(fh.read())


def config_dump(cfg: ExperimentConfig):
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
