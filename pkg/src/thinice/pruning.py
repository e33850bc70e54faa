"""Pruning: magnitude baseline, HYDRA score search, ADMM, l0-projected training, and the pipeline.

Every method counts pruned weights the same way: ``ceil(s * total)`` weight
entries are removed (biases never count), smallest magnitudes first, ties
broken by ascending flat index over the concatenated weight tensors.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import rng
from .errors import ConfigError, NumericError, StageError, ThinIceError
from .nn import forward, save_checkpoint, sparsity
from .tensor import Tensor, backward, softmax_cross_entropy
from .training import (AdversarialSettings, TrainConfig, as_arrays, batches, clean_metrics, craft, finetune_masked,
                       sgd_train, train_adversarial, train_standard)

logger = logging.getLogger(__name__)

Locality = Literal["global", "local"]


# ---------------------------------------------------------------- configuration

class HydraSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    score_epochs: int = Field(10, ge=1)
    lr: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)


class AdmmSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    rho: float = Field(1e-2, gt=0)
    outer_iters: int = Field(10, ge=1)
    inner_epochs: int = Field(2, ge=1)
    lr: float = Field(0.01, gt=0)


class AtmcSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    epochs: int = Field(10, ge=1)
    project_every: int = Field(10, ge=1)
    lr: float = Field(0.01, gt=0)


class PruneConfig(BaseModel):
    """One pruning run. ``locality`` defaults to local for ADMM (per-layer sets) and global otherwise."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    method: Literal["magnitude", "hydra", "admm", "atmc"] = "magnitude"
    target_sparsity: float = Field(ge=0, lt=1)
    locality: Optional[Locality] = None
    hydra: HydraSettings = Field(default_factory=HydraSettings)
    admm: AdmmSettings = Field(default_factory=AdmmSettings)
    atmc: AtmcSettings = Field(default_factory=AtmcSettings)
    adversarial: Optional[AdversarialSettings] = None
    batch_size: int = Field(64, ge=1)
    seed: int = Field(0, ge=0)

    @property
    def scope(self):
        if self.locality is not None:
            return self.locality
        return "local" if self.method == "admm" else "global"


# ---------------------------------------------------------------- top-k selection

def prune_count(total, target_sparsity):
    if not 0 <= target_sparsity < 1:
        raise ConfigError(f"target sparsity must lie in [0, 1), got {target_sparsity}")
    return min(math.ceil(target_sparsity * total - 1e-12), total)


def keep_mask(values, n_prune):
    """Boolean keep-mask that drops the ``n_prune`` smallest |values| (ties: lower flat index first)."""
    v = np.abs(np.asarray(values, dtype=np.float64)).reshape(-1)
    if not 0 <= n_prune <= v.size:
        raise ConfigError(f"cannot prune {n_prune} of {v.size} entries")
    order = np.lexsort((np.arange(v.size), v))
    keep = np.ones(v.size, dtype=bool)
    keep[order[:n_prune]] = False
    return keep.reshape(np.shape(values))


def allocate(sizes, n_prune):
    """Split ``n_prune`` across tensors proportionally to size (largest remainder, ties to earlier tensors)."""
    sizes = np.asarray(sizes, dtype=np.int64)
    total = int(sizes.sum())
    quota = [n_prune * int(s) / total for s in sizes]
    base = [min(math.floor(q), int(s)) for q, s in zip(quota, sizes)]
    rest = n_prune - sum(base)
    order = sorted(range(len(sizes)), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order:
        if rest == 0:
            break
        if base[i] < sizes[i]:
            base[i] += 1
            rest -= 1
    return base


def topk_masks(tensors, target_sparsity, locality="global"):
    """Keep-masks (float32 0/1) over a list of arrays, pruning exactly ceil(s * total) entries."""
    sizes = [int(np.size(t)) for t in tensors]
    n_prune = prune_count(sum(sizes), target_sparsity)
    if locality == "global":
        flat = np.concatenate([np.reshape(t, -1) for t in tensors])
        keep = keep_mask(flat, n_prune)
        parts = np.split(keep, np.cumsum(sizes)[:-1])
        return [p.reshape(np.shape(t)).astype(np.float32) for p, t in zip(parts, tensors)]
    if locality == "local":
        return [keep_mask(t, k).astype(np.float32) for t, k in zip(tensors, allocate(sizes, n_prune))]
    raise ConfigError(f"unknown locality {locality!r}")


def effective_weights(net):
    return [net.params[i].data * net.masks[i].data for i in net.weight_indices]


def _fan_in(w):
    # dense weights are [in, out]; conv kernels are [c_out, c_in, kh, kw]
    return w.shape[0] if w.ndim == 2 else int(np.prod(w.shape[1:]))


# ---------------------------------------------------------------- magnitude

def magnitude_prune(net, target_sparsity, locality="global"):
    """Mask the smallest-magnitude effective weights. Returns a pruned copy."""
    out = net.copy()
    out.set_masks(topk_masks(effective_weights(net), target_sparsity, locality))
    return out


# ---------------------------------------------------------------- HYDRA

@dataclass
class HydraTrace:
    kept: list = field(default_factory=list)
    loss: list = field(default_factory=list)


def hydra_prune(pretrained, dataset, cfg: PruneConfig):
    """Search a mask by optimising per-weight importance scores; weights stay frozen.

    Scores start at theta * sqrt(6 / fan_in). Each step uses the top-k mask
    of |scores| in the forward pass and passes the gradient with respect to
    the mask straight through to the scores (d loss / d s = d loss / d w_eff * theta).
    Batches are adversarial when ``cfg.adversarial`` is set. Returns the
    pruned copy and a trace of kept-weight counts and losses per step.
    """
    x, y = as_arrays(dataset)
    widx = pretrained.weight_indices
    theta = [pretrained.params[i].data.astype(np.float64) * pretrained.masks[i].data for i in widx]
    scores = [t * math.sqrt(6.0 / _fan_in(t)) for t in theta]
    velocity = [np.zeros_like(s) for s in scores]
    hs = cfg.hydra
    work = pretrained.copy()
    trace = HydraTrace()
    for j, i in enumerate(widx):
        work.params[i].data = theta[j].astype(work.params[i].dtype)
    if cfg.target_sparsity == 0:
        work.set_masks([np.ones_like(t, dtype=np.float32) for t in theta])
        return work, trace

    # scores see d loss / d w_eff at every position, so the gradient pass runs
    # on an unmasked twin with theta * mask fed in as the weights
    dense_twin = pretrained.copy()
    dense_twin.set_masks([np.ones_like(t, dtype=np.float32) for t in theta])
    for epoch in range(hs.score_epochs):
        for b, idx in enumerate(batches(len(x), cfg.batch_size, rng.derive_seed(cfg.seed, "hydra"), epoch)):
            masks = topk_masks(scores, cfg.target_sparsity, cfg.scope)
            for j, i in enumerate(widx):
                work.params[i].data = theta[j].astype(work.params[i].dtype)
            work.set_masks(masks)
            trace.kept.append(int(sum(m.sum() for m in masks)))
            xa = craft(work, x[idx], y[idx], cfg.adversarial, rng.derive_seed(cfg.seed, "hydra", epoch, b))
            leaves = list(work.params)
            for j, i in enumerate(widx):
                leaves[i] = Tensor(theta[j] * masks[j], requires_grad=True, dtype=work.params[i].dtype)
            loss = softmax_cross_entropy(forward(dense_twin, xa, params=leaves), y[idx])
            backward(loss)
            trace.loss.append(float(loss.data))
            for j, i in enumerate(widx):
                g_s = leaves[i].grad.astype(np.float64) * theta[j]
                velocity[j] = hs.momentum * velocity[j] + g_s
                scores[j] = scores[j] - hs.lr * velocity[j]
    final = topk_masks(scores, cfg.target_sparsity, cfg.scope)
    out = pretrained.copy()
    out.set_masks(final)
    return out, trace


# ---------------------------------------------------------------- ADMM

@dataclass
class AdmmState:
    """Auxiliary copies ``z``, scaled duals ``u`` and the selection behind each z."""

    z: list
    u: list
    selection: list
    residuals: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)


def l0_project(tensors, target_sparsity, locality):
    """Euclidean projection onto the l0 ball: keep the largest magnitudes, zero the rest."""
    masks = topk_masks(tensors, target_sparsity, locality)
    return [np.asarray(t, dtype=np.float64) * m for t, m in zip(tensors, masks)], masks


def admm_loop(theta, theta_update: Callable, target_sparsity, outer_iters, locality="local", record=True):
    """Alternating theta / z / u updates for  min f(theta)  s.t.  theta in {||.||_0 <= k}.

    ``theta_update(theta, z, u)`` returns the new weights, approximately
    minimising f(theta) + rho/2 ||theta - z + u||^2. Then z is the l0
    projection of theta + u and u += theta - z. ``residuals`` holds
    ||theta - z||_2 after each outer iteration.
    """
    theta = [np.asarray(t, dtype=np.float64) for t in theta]
    z, sel = l0_project(theta, target_sparsity, locality)
    state = AdmmState(z=z, u=[np.zeros_like(t) for t in theta], selection=sel)
    for it in range(outer_iters):
        theta = [np.asarray(t, dtype=np.float64) for t in theta_update(theta, state.z, state.u)]
        if not all(np.isfinite(t).all() for t in theta):
            raise NumericError(f"ADMM diverged in outer iteration {it}")
        u_prev = [u.copy() for u in state.u]
        state.z, state.selection = l0_project([t + u for t, u in zip(theta, state.u)], target_sparsity, locality)
        state.u = [u + t - zz for u, t, zz in zip(state.u, theta, state.z)]
        state.residuals.append(math.sqrt(sum(float(((t - zz) ** 2).sum()) for t, zz in zip(theta, state.z))))
        if record:
            state.snapshots.append({"theta": [t.copy() for t in theta], "z": [zz.copy() for zz in state.z],
                                    "u_prev": u_prev, "u": [u.copy() for u in state.u]})
    return theta, state


def admm_prune(net, dataset, cfg: PruneConfig):
    """Concurrent (adversarial) training and pruning through ADMM.

    Each outer iteration runs ``inner_epochs`` of SGD on the training loss
    plus rho/2 ||theta - z + u||^2 over the weight tensors, then updates z
    and u. The final mask is the selection behind the last z, so the count
    of pruned weights is exact. Returns the pruned copy and the state.
    """
    a = cfg.admm
    work = net.copy()
    widx = work.weight_indices
    rounds = []

    def theta_update(theta, z, u):
        target = {i: zz - uu for i, zz, uu in zip(widx, z, u)}

        def penalty(n):
            return [a.rho * (n.params[i].data.astype(np.float64) - target[i]) if i in target else None
                    for i in range(len(n.params))]

        it = len(rounds)
        tcfg = TrainConfig(epochs=a.inner_epochs, batch_size=cfg.batch_size, learning_rate=a.lr,
                           seed=rng.derive_seed(cfg.seed, "admm", it), adversarial=cfg.adversarial)
        sgd_train(work, dataset, tcfg, penalty=penalty)
        rounds.append(it)
        return [work.params[i].data for i in widx]

    _, state = admm_loop(effective_weights(work), theta_update, cfg.target_sparsity, a.outer_iters, cfg.scope)
    work.set_masks(state.selection)
    return work, state


# ---------------------------------------------------------------- ATMC-lite

@dataclass
class AtmcTrace:
    nonzeros: list = field(default_factory=list)
    history: object = None


def atmc_lite(net, dataset, cfg: PruneConfig):
    """Adversarial training with periodic l0 projection of the weights (sparsity constraint only).

    Every ``project_every`` optimiser steps, and once after the last step,
    the weights are projected onto {||theta||_0 <= k}. The final mask is the
    support of theta, so sparsity is at least the target. The factorisation
    and quantisation parts of the original method are not implemented.
    """
    a = cfg.atmc
    work = net.copy()
    widx = work.weight_indices
    k_total = sum(work.params[i].size for i in widx)
    trace = AtmcTrace()

    def project(n):
        projected, _ = l0_project([n.params[i].data for i in widx], cfg.target_sparsity, cfg.scope)
        for i, t in zip(widx, projected):
            n.params[i].data = t.astype(n.params[i].dtype)
        nz = sum(int(np.count_nonzero(n.params[i].data)) for i in widx)
        trace.nonzeros.append(nz)

    def hook(n, step):
        if step % a.project_every == 0:
            project(n)

    tcfg = TrainConfig(epochs=a.epochs, batch_size=cfg.batch_size, learning_rate=a.lr,
                       seed=cfg.seed, adversarial=cfg.adversarial)
    trace.history = sgd_train(work, dataset, tcfg, step_hook=hook)
    project(work)
    work.set_masks([(work.params[i].data != 0).astype(np.float32) * work.masks[i].data for i in widx])
    assert trace.nonzeros[-1] <= k_total
    return work, trace


# ---------------------------------------------------------------- dispatch and pipeline

def prune(net, dataset, cfg: PruneConfig):
    """Run the configured method; returns (pruned network, method-specific trace or None)."""
    if cfg.method == "magnitude":
        return magnitude_prune(net, cfg.target_sparsity, cfg.scope), None
    if cfg.method == "hydra":
        return hydra_prune(net, dataset, cfg)
    if cfg.method == "admm":
        return admm_prune(net, dataset, cfg)
    if cfg.method == "atmc":
        return atmc_lite(net, dataset, cfg)
    raise ConfigError(f"unknown pruning method {cfg.method!r}")


class PipelinePlan(BaseModel):
    """Pretrain, then one or more prune and fine-tune rounds.

    ``schedule`` lists per-round sparsities for iterative pruning and must
    end at the target; left empty, pruning is one-shot.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    pretrain: Optional[TrainConfig] = None
    prune: PruneConfig
    finetune: TrainConfig
    schedule: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.schedule:
            if any(not 0 <= s < 1 for s in self.schedule):
                raise ValueError("schedule sparsities must lie in [0, 1)")
            if any(b < a for a, b in zip(self.schedule, self.schedule[1:])):
                raise ValueError("schedule must be non-decreasing")
            if self.schedule[-1] != self.prune.target_sparsity:
                raise ValueError("schedule must end at the target sparsity")
        return self

    def rounds(self):
        return list(self.schedule) or [self.prune.target_sparsity]


LOG_COLUMNS = ["round", "stage", "method", "target_sparsity", "sparsity", "clean_loss", "adv_loss", "clean_acc"]


def _log_row(rows, rnd, stage, method, target, net, history, dataset):
    if history is not None and len(history):
        last = history.rows[-1]
        cl, al, acc = last["clean_loss"], last["adv_loss"], last["clean_acc"]
    else:
        x, y = as_arrays(dataset)
        cl, acc = clean_metrics(net, x, y)
        al = cl
    rows.append([rnd, stage, method, f"{target:.4f}", f"{sparsity(net):.6f}", f"{cl:.8g}", f"{al:.8g}", f"{acc:.6f}"])


@dataclass
class PipelineResult:
    dense: object
    pruned: object
    dense_path: str
    pruned_path: str
    round_paths: list
    log_path: str


def run_pipeline(net, dataset, plan: PipelinePlan, out_dir, pretrained=False, dense_path=None):
    """Pretrain, save the dense checkpoint, then prune and fine-tune per round.

    Writes ``dense/``, ``round_<r>/`` and ``pruned/`` checkpoints plus
    ``pipeline_log.csv`` under ``out_dir``. Passing ``dense_path`` marks the
    dense checkpoint as already saved there, so it is not written again.
    A failing stage raises StageError naming it; files written by this call
    are removed.
    """
    os.makedirs(out_dir, exist_ok=True)
    created = []
    rows = []
    stage = "pretrain"
    try:
        dense = net.copy()
        if not pretrained and plan.pretrain is not None:
            trainer = train_adversarial if plan.pretrain.adversarial is not None else train_standard
            dense, hist = trainer(dense, dataset, plan.pretrain)
            _log_row(rows, 0, "pretrain", "dense", 0.0, dense, hist, dataset)
        if dense_path is None:
            stage = "save-dense"
            dense_path = os.path.join(out_dir, "dense")
            created.append(dense_path)
            save_checkpoint(dense, dense_path, provenance="dense")
        current = dense.copy()
        round_paths = []
        for r, s in enumerate(plan.rounds(), start=1):
            stage = f"prune[{r}]"
            pcfg = plan.prune.model_copy(update={"target_sparsity": s, "seed": rng.derive_seed(plan.prune.seed, r)})
            current, _ = prune(current, dataset, pcfg)
            _log_row(rows, r, "prune", pcfg.method, s, current, None, dataset)
            stage = f"finetune[{r}]"
            before = sparsity(current, exact=True)
            fcfg = plan.finetune.model_copy(update={"seed": rng.derive_seed(plan.finetune.seed, r)})
            if fcfg.epochs:
                current, hist = finetune_masked(current, dataset, fcfg)
            else:
                hist = None
            if sparsity(current, exact=True) != before:
                raise AssertionError("fine-tuning changed the sparsity")
            _log_row(rows, r, "finetune", pcfg.method, s, current, hist, dataset)
            stage = f"save-round[{r}]"
            path = os.path.join(out_dir, f"round_{r}")
            created.append(path)
            save_checkpoint(current, path, provenance=f"{pcfg.method} round {r} sparsity {s}")
            round_paths.append(path)
        stage = "save-pruned"
        pruned_path = os.path.join(out_dir, "pruned")
        created.append(pruned_path)
        save_checkpoint(current, pruned_path, provenance=f"{plan.prune.method} final")
        log_path = os.path.join(out_dir, "pipeline_log.csv")
        created.append(log_path)
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            w.writerows(rows)
    except (ThinIceError, ValueError, ArithmeticError, AssertionError, OSError) as exc:
        for path in created:
            if os.path.isdir(path):
                shutil.rmtree(path, ignore_errors=True)
            elif os.path.exists(path):
                os.remove(path)
        raise StageError(stage, exc) from exc
    return PipelineResult(dense, current, dense_path, pruned_path, round_paths, log_path)
