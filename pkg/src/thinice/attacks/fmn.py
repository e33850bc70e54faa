"""Fast Minimum-Norm attack: distance from a sample to the decision boundary."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..nn import forward, logits_of, predict_logits
from ..tensor import Tensor, backward, neg, pick, project_array, sub, tsum
from .base import as_batch, bview, norm_of

DUAL = {"linf": "l1", "l2": "l2"}


class FmnConfig(BaseModel):
    """FMN settings. Step size and gamma follow cosine annealing between the init and final values."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    norm: Literal["linf", "l2"] = "linf"
    steps: int = Field(100, ge=1)
    alpha_init: float = Field(1.0, gt=0)
    alpha_final: float | None = Field(None, gt=0)
    gamma_init: float = Field(0.05, gt=0, lt=1)
    gamma_final: float = Field(0.001, gt=0, lt=1)


@dataclass
class FmnResult:
    epsilon: np.ndarray
    x_adv: np.ndarray
    converged: np.ndarray

    def __len__(self):
        return len(self.epsilon)


def _logit_diff(net, xt, y, target):
    """Untargeted: z_y - max_{j!=y} z_j.  Targeted: -(z_t - max_{j!=t} z_j).

    Either way the sample is adversarial once the value goes negative,
    so the attack always descends it.
    """
    logits = forward(net, xt)
    cls = y if target is None else target
    z = logits.data.astype(np.float64).copy()
    z[np.arange(len(z)), cls] = -np.inf
    other = np.argmax(z, axis=1)
    diff = sub(pick(logits, cls), pick(logits, other))
    return (diff if target is None else neg(diff)), logits.data


def fmn(net, x, y, cfg: FmnConfig | None = None, target=None, norm=None, steps=None):
    """Minimum-norm adversarial perturbation per sample.

    Each iteration takes a normalised gradient step that lowers the logit
    difference, then projects onto an eps-ball whose radius shrinks by
    (1 - gamma) while the iterate is adversarial, grows by (1 + gamma) after
    a first adversarial point was found, and otherwise jumps just past a
    linearised boundary estimate. Returns the smallest adversarial norm
    seen; samples already adversarial at delta = 0 get exactly 0, and
    samples never made adversarial get +inf with ``converged`` False.

    With ``target`` the attack seeks the region of that class instead.
    """
    cfg = cfg or FmnConfig()
    if norm is not None or steps is not None:
        cfg = cfg.model_copy(update={k: v for k, v in (("norm", norm), ("steps", steps)) if v is not None})
    x, y, _ = as_batch(x, y, None)
    tgt = None if target is None else np.broadcast_to(np.asarray(target, dtype=np.int64), y.shape).copy()
    n, nd = len(x), x.ndim
    p, q = cfg.norm, DUAL[cfg.norm]
    alpha_final = cfg.alpha_final if cfg.alpha_final is not None else cfg.alpha_init / 100.0

    x64 = x.astype(np.float64)
    delta = np.zeros_like(x64)
    epsilon = np.full(n, np.inf)
    best_norm = np.full(n, np.inf)
    best_adv = x.copy()
    found = np.zeros(n, dtype=bool)
    worst = norm_of(np.maximum(x64, 1.0 - x64), p)

    for i in range(cfg.steps):
        cosine = (1.0 + math.cos(math.pi * i / cfg.steps)) / 2.0
        gamma = cfg.gamma_final + (cfg.gamma_init - cfg.gamma_final) * cosine
        alpha = alpha_final + (cfg.alpha_init - alpha_final) * cosine

        x_cur = (x64 + delta).astype(np.float32)
        xt = Tensor(x_cur, requires_grad=True)
        diff, logits = _logit_diff(net, xt, y, tgt)
        backward(tsum(diff))
        g = xt.grad.astype(np.float64)
        loss = diff.data.astype(np.float64)

        d_norm = norm_of(x_cur.astype(np.float64) - x64, p)
        pred = predict_logits(logits)
        adv = pred == tgt if tgt is not None else pred != y
        smaller = adv & (d_norm < best_norm)
        best_norm = np.where(smaller, d_norm, best_norm)
        best_adv[smaller] = x_cur[smaller]
        found |= adv

        g_dual = np.maximum(norm_of(g, q), 1e-12)
        to_boundary = np.abs(loss) / g_dual
        epsilon = np.where(
            adv,
            np.minimum(epsilon * (1.0 - gamma), best_norm),
            # the linear boundary estimate is inflated by (1 + gamma) so the
            # next iterate lands past the boundary instead of on it
            np.where(found, epsilon * (1.0 + gamma), (d_norm + to_boundary) * (1.0 + gamma)),
        )
        epsilon = np.minimum(epsilon, worst)

        g_l2 = np.maximum(norm_of(g, "l2"), 1e-12)
        delta = delta - alpha * g / bview(g_l2, nd)
        # project delta onto the eps-ball and the box in one go
        delta = project_array(x64 + delta, x64, epsilon, p, batched=True) - x64

    # the last iterate has not been scored yet
    x_cur = (x64 + delta).astype(np.float32)
    logits = logits_of(net, x_cur)
    pred = predict_logits(logits)
    adv = pred == tgt if tgt is not None else pred != y
    d_norm = norm_of(x_cur.astype(np.float64) - x64, p)
    smaller = adv & (d_norm < best_norm)
    best_norm = np.where(smaller, d_norm, best_norm)
    best_adv[smaller] = x_cur[smaller]
    found |= adv
    return FmnResult(epsilon=best_norm, x_adv=best_adv, converged=found)
