"""Shared attack configuration, outcome container and gradient plumbing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .. import rng
from ..nn import attack_objective, forward, predict_logits
from ..tensor import Tensor, backward, tsum

Norm = Literal["linf", "l2"]
LossKind = Literal["ce", "margin", "dlr"]


class AttackConfig(BaseModel):
    """Fixed-budget attack settings.

    ``targets`` switches APGD to targeted mode over that many classes;
    ``step_size`` defaults to ``2.5 * eps / steps`` for PGD.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    eps: float = Field(ge=0)
    norm: Norm = "linf"
    steps: int = Field(10, ge=1)
    step_size: Optional[float] = Field(None, gt=0)
    restarts: int = Field(1, ge=1)
    loss: LossKind = "ce"
    targets: Optional[int] = Field(None, ge=1)
    query_budget: int = Field(5000, ge=0)
    p_init: float = Field(0.8, gt=0, le=1)
    seed: int = Field(0, ge=0)

    def pgd_step(self):
        return self.step_size if self.step_size is not None else 2.5 * self.eps / self.steps


@dataclass
class AttackOutcome:
    """Per-sample results for a batch; index it to get one sample's view."""

    success: np.ndarray
    x_adv: np.ndarray
    delta_norm: np.ndarray
    queries: np.ndarray
    best_loss: np.ndarray

    def __len__(self):
        return len(self.success)

    def __getitem__(self, i):
        return AttackOutcome(self.success[i], self.x_adv[i], self.delta_norm[i], self.queries[i], self.best_loss[i])

    def rows(self, attack, sample_ids):
        for sid, ok, dn, q, bl in zip(sample_ids, self.success, self.delta_norm, self.queries, self.best_loss):
            yield {"sample_id": int(sid), "attack": attack, "success": int(bool(ok)),
                   "delta_norm": f"{float(dn):.6g}", "queries": int(q), "best_loss": f"{float(bl):.6g}"}


OUTCOME_COLUMNS = ["sample_id", "attack", "success", "delta_norm", "queries", "best_loss"]


def write_outcomes_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=OUTCOME_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def norm_of(delta, norm):
    flat = np.asarray(delta, dtype=np.float64).reshape(len(delta), -1)
    if norm == "linf":
        return np.abs(flat).max(axis=1)
    if norm == "l2":
        return np.sqrt((flat * flat).sum(axis=1))
    if norm == "l1":
        return np.abs(flat).sum(axis=1)
    raise ValueError(f"unknown norm {norm!r}")


def bview(v, ndim):
    """Reshape a per-sample vector so it broadcasts against a batch."""
    return np.asarray(v).reshape((-1,) + (1,) * (ndim - 1))


def objective_and_grad(net, x, y, kind, target=None):
    """Per-sample attack objective, its input gradient, and the logits."""
    xt = Tensor(x, requires_grad=True)
    logits = forward(net, xt)
    obj = attack_objective(kind, logits, y, target)
    backward(tsum(obj))
    return obj.data.astype(np.float64), xt.grad, logits.data


def objective(net, x, y, kind, target=None):
    logits = forward(net, x)
    return attack_objective(kind, logits, y, target).data.astype(np.float64), logits.data


def is_adversarial(logits, y, target=None):
    pred = predict_logits(logits)
    return pred == target if target is not None else pred != y


def random_start(x, eps, norm, seed, sample_ids, restart):
    """Uniform point in the eps-ball (box-clipped), one Philox stream per sample."""
    out = np.empty_like(x)
    d = int(np.prod(x.shape[1:]))
    for i, sid in enumerate(sample_ids):
        g = rng.stream(seed, rng.RESTART, int(sid), restart)
        if norm == "linf":
            delta = g.uniform(-eps, eps, size=d)
        else:
            v = g.standard_normal(d)
            v /= max(np.linalg.norm(v), 1e-12)
            delta = v * eps * g.random() ** (1.0 / d)
        out[i] = np.clip(x[i].reshape(-1) + delta, 0.0, 1.0).reshape(x.shape[1:])
    return out


class BestTracker:
    """Keeps, per sample, the max-objective iterate and the best adversarial one."""

    def __init__(self, x):
        n = len(x)
        self.best_obj = np.full(n, -np.inf)
        self.best_x = x.copy()
        self.found = np.zeros(n, dtype=bool)
        self.adv_obj = np.full(n, -np.inf)
        self.adv_x = x.copy()

    def update(self, x, obj, adv):
        better = obj > self.best_obj
        self.best_obj = np.where(better, obj, self.best_obj)
        self.best_x[better] = x[better]
        take = adv & (~self.found | (obj > self.adv_obj))
        self.adv_obj = np.where(take, obj, self.adv_obj)
        self.adv_x[take] = x[take]
        self.found |= adv

    def result(self, x, clean_wrong, norm="linf"):
        x_adv = np.where(bview(self.found, x.ndim), self.adv_x, self.best_x)
        x_adv[clean_wrong] = x[clean_wrong]
        success = self.found | clean_wrong
        return AttackOutcome(
            success=success,
            x_adv=x_adv,
            delta_norm=norm_of(x_adv - x, norm),
            queries=np.zeros(len(x), dtype=np.int64),
            best_loss=self.best_obj.copy(),
        )


def as_batch(x, y, sample_ids):
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if y.ndim == 0:
        x, y = x[None], y[None]
    ids = np.arange(len(x)) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    if len(ids) != len(x) or len(y) != len(x):
        raise ValueError("x, y and sample_ids must have equal length")
    return x, y, ids
