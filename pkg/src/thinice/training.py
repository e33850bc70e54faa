"""Standard and adversarial SGD training, plus mask-respecting fine-tuning."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import rng
from .attacks.base import AttackConfig
from .attacks.gradient import pgd
from .errors import NumericError, ShapeError
from .nn import forward, predict_logits
from .tensor import Tensor, backward, softmax_cross_entropy

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "clean_loss", "adv_loss", "clean_acc"]


class AdversarialSettings(BaseModel):
    """Inner maximisation: PGD from the clean point, step 2.5 * eps / steps unless set."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eps: float = Field(ge=0)
    steps: int = Field(10, ge=1)
    step_size: Optional[float] = Field(None, gt=0)
    norm: Literal["linf", "l2"] = "linf"

    def attack_config(self, seed):
        return AttackConfig(eps=self.eps, norm=self.norm, steps=self.steps, step_size=self.step_size,
                            restarts=1, loss="ce", seed=seed)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(30, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(0.05, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    decay_epochs: List[int] = Field(default_factory=list)
    decay_factor: float = Field(0.1, gt=0, le=1)
    seed: int = Field(0, ge=0)
    adversarial: Optional[AdversarialSettings] = None

    def lr_at(self, epoch):
        return self.learning_rate * self.decay_factor ** sum(epoch >= d for d in self.decay_epochs)


@dataclass
class LossHistory:
    rows: list = field(default_factory=list)

    def append(self, epoch, clean_loss, adv_loss, clean_acc):
        self.rows.append({"epoch": epoch, "clean_loss": clean_loss, "adv_loss": adv_loss, "clean_acc": clean_acc})

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return isinstance(other, LossHistory) and self.rows == other.rows

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"], f"{r['clean_loss']:.8g}", f"{r['adv_loss']:.8g}", f"{r['clean_acc']:.6f}"])


def as_arrays(dataset):
    """Accept ``(x, y)`` or any object with ``x`` and ``y`` attributes."""
    x, y = (dataset.x, dataset.y) if hasattr(dataset, "x") else dataset
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("dataset is empty")
    if len(x) != len(y):
        raise ShapeError(f"{len(x)} inputs but {len(y)} labels")
    return x, y


def batches(n, batch_size, seed, epoch):
    """Index batches for one epoch, shuffled by a stream keyed on (seed, epoch)."""
    order = rng.stream(seed, rng.SHUFFLE, epoch).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def craft(net, xb, yb, adversarial, seed):
    """Adversarial batch for the current parameters, or ``xb`` itself when eps is 0."""
    if adversarial is None or adversarial.eps == 0:
        return xb
    return pgd(net, xb, yb, adversarial.attack_config(seed)).x_adv


def batch_loss_and_grads(net, xb, yb, params=None):
    """Mean cross-entropy and parameter gradients (float64) for one batch."""
    params = net.params if params is None else params
    leaves = [Tensor(p.data, requires_grad=True, dtype=p.dtype) for p in params]
    loss = softmax_cross_entropy(forward(net, xb, params=leaves), yb)
    backward(loss)
    return float(loss.data), [leaf.grad.astype(np.float64) for leaf in leaves]


def clean_metrics(net, x, y):
    logits = forward(net, x)
    loss = float(softmax_cross_entropy(logits, y).data)
    return loss, float(np.mean(predict_logits(logits.data) == y))


def check_masked_zero(net, context):
    for i in net.weight_indices:
        p, m = net.params[i].data, net.masks[i].data
        if (p[m == 0] != 0).any():
            raise AssertionError(f"masked weights of parameter {i} became nonzero ({context})")


def sgd_train(net, dataset, cfg: TrainConfig,
              step_hook: Callable | None = None,
              penalty: Callable | None = None):
    """Train ``net`` in place with SGD and momentum; returns the loss history.

    Gradients of weight tensors are multiplied by their masks before the
    update, so masked weights stay exactly zero. ``penalty(net)`` may return
    extra float64 gradients (one per parameter, or None) added to the loss
    gradients. ``step_hook(net, step)`` runs after every update.
    """
    x, y = as_arrays(dataset)
    if tuple(x.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(f"dataset inputs {x.shape[1:]} do not match network input {net.input_shape}")
    if y.min() < 0 or y.max() >= net.classes:
        raise ShapeError(f"labels must lie in [0, {net.classes})")
    net.apply_masks()
    velocity = [np.zeros(p.shape, dtype=np.float64) for p in net.params]
    history = LossHistory()
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        adv_losses, sizes = [], []
        try:
            for b, idx in enumerate(batches(len(x), cfg.batch_size, cfg.seed, epoch)):
                xb, yb = x[idx], y[idx]
                xa = craft(net, xb, yb, cfg.adversarial, rng.derive_seed(cfg.seed, epoch, b))
                loss, grads = batch_loss_and_grads(net, xa, yb)
                extra = penalty(net) if penalty is not None else None
                for i, p in enumerate(net.params):
                    g = grads[i]
                    if extra is not None and extra[i] is not None:
                        g = g + extra[i]
                    if cfg.weight_decay and net.masks[i] is not None:
                        g = g + cfg.weight_decay * p.data
                    if net.masks[i] is not None:
                        g = g * net.masks[i].data
                    velocity[i] = cfg.momentum * velocity[i] + g
                    new = p.data.astype(np.float64) - lr * velocity[i]
                    if not np.isfinite(new).all():
                        raise NumericError("parameter update produced non-finite values")
                    p.data = new.astype(p.dtype)
                step += 1
                if step_hook is not None:
                    step_hook(net, step)
                adv_losses.append(loss)
                sizes.append(len(idx))
            clean_loss, clean_acc = clean_metrics(net, x, y)
        except NumericError as exc:
            raise NumericError(f"training diverged in epoch {epoch}: {exc}") from exc
        adv_loss = float(np.average(adv_losses, weights=sizes)) if adv_losses else clean_loss
        check_masked_zero(net, f"epoch {epoch}")
        history.append(epoch, clean_loss, adv_loss, clean_acc)
        logger.debug("epoch %d lr %.4g clean %.4f adv %.4f acc %.4f", epoch, lr, clean_loss, adv_loss, clean_acc)
    return history


def train_standard(net, dataset, cfg: TrainConfig):
    """Cross-entropy training on clean data. Returns (trained copy, history)."""
    out = net.copy()
    return out, sgd_train(out, dataset, cfg.model_copy(update={"adversarial": None}))


def train_adversarial(net, dataset, cfg: TrainConfig):
    """Min-max training: every batch is replaced by its PGD counterpart before the step."""
    if cfg.adversarial is None:
        raise ValueError("train_adversarial needs cfg.adversarial")
    out = net.copy()
    return out, sgd_train(out, dataset, cfg)


def finetune_masked(net, dataset, cfg: TrainConfig):
    """Fine-tune a pruned network; its masks, and so its sparsity, never change."""
    if not net.weight_indices:
        raise ValueError("network has no weight masks")
    out = net.copy()
    return out, sgd_train(out, dataset, cfg)
