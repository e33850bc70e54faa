"""Square Attack (linf): score-based random search over square patches.

Patch size follows ``p``, the fraction of pixels changed per query. ``p``
starts at ``p_init`` and is halved each time the query index crosses one of
these fractions of the budget (per mille):

    ====================  ====
    budget fraction (‰)   p
    ====================  ====
    [0, 2)                p_init
    [2, 10)               p_init / 2
    [10, 20)              p_init / 4
    [20, 50)              p_init / 8
    [50, 100)             p_init / 16
    [100, 200)            p_init / 32
    [200, 400)            p_init / 64
    [400, 600)            p_init / 128
    [600, 800)            p_init / 256
    [800, 1000]           p_init / 512
    ====================  ====

Inputs that are plain vectors are treated as 1 x 1 x d images.
"""

from __future__ import annotations

import numpy as np

from .. import rng
from ..nn import logits_of, margin_values, predict_logits
from .base import AttackConfig, AttackOutcome, as_batch, norm_of

HALVING_PERMILLE = (2, 10, 20, 50, 100, 200, 400, 600, 800)
_CHUNK = 256


def p_schedule(p_init, query, budget):
    frac = 1000.0 * query / max(budget, 1)
    halvings = sum(frac >= t for t in HALVING_PERMILLE)
    return p_init / (2 ** halvings)


def _as_image(x):
    if x.ndim == 2:
        return x.reshape(len(x), 1, 1, x.shape[1])
    if x.ndim == 3:
        return x[:, None]
    return x


class _Draws:
    """Per-sample uniform draws, fetched in fixed-size chunks from each sample's stream."""

    def __init__(self, seed, sample_ids, width):
        self.gens = [rng.stream(seed, rng.SQUARE, int(s)) for s in sample_ids]
        self.width = width
        self.buf = None
        self.pos = _CHUNK

    def init_signs(self, shape):
        return np.stack([np.where(g.random(shape) < 0.5, -1.0, 1.0) for g in self.gens])

    def next(self):
        if self.pos == _CHUNK:
            self.buf = np.stack([g.random((_CHUNK, self.width)) for g in self.gens])
            self.pos = 0
        out = self.buf[:, self.pos]
        self.pos += 1
        return out


def square_attack(net, x, y, cfg: AttackConfig, sample_ids=None):
    """Black-box linf Square Attack using only forward passes.

    The clean prediction is taken as given (not a query). The first query
    evaluates a random vertical-stripe perturbation of +-eps; each later
    query redraws one square window to +-eps per channel and is kept iff it
    strictly lowers the logit margin. Attacking stops per sample on success
    or when its query budget is spent.
    """
    x, y, ids = as_batch(x, y, sample_ids)
    n = len(x)
    eps = cfg.eps
    budget = cfg.query_budget
    queries = np.zeros(n, dtype=np.int64)
    clean_logits = logits_of(net, x)
    success = predict_logits(clean_logits) != y
    best_margin = margin_values(clean_logits, y)
    if budget == 0 or n == 0:
        return AttackOutcome(success, x.copy(), np.zeros(n), queries, -best_margin)

    img = _as_image(x).astype(np.float64)
    _, c, h, w = img.shape
    draws = _Draws(cfg.seed, ids, 2 + c)
    delta = eps * draws.init_signs((c, 1, w))
    delta = np.broadcast_to(delta, img.shape).copy()
    cand = np.clip(img + delta, 0.0, 1.0)

    active = ~success
    logits = logits_of(net, cand.reshape(x.shape).astype(np.float32))
    queries[active] += 1
    margin = margin_values(logits, y)
    best_margin = np.where(active, margin, best_margin)
    success |= active & (predict_logits(logits) != y)
    x_best = np.where(active[:, None, None, None], cand, img)
    hh, ww = np.arange(h), np.arange(w)

    for q in range(1, budget):
        u = draws.next()
        active = ~success & (queries < budget)
        if not active.any():
            break
        p = p_schedule(cfg.p_init, q, budget)
        s = int(round(np.sqrt(p * h * w)))
        s = min(max(s, 1), h, w)
        rows = np.minimum((u[:, 0] * (h - s + 1)).astype(np.int64), h - s)
        cols = np.minimum((u[:, 1] * (w - s + 1)).astype(np.int64), w - s)
        signs = np.where(u[:, 2:] < 0.5, -eps, eps)[:, :, None, None]
        in_row = (hh >= rows[:, None]) & (hh < rows[:, None] + s)
        in_col = (ww >= cols[:, None]) & (ww < cols[:, None] + s)
        window = (in_row[:, :, None] & in_col[:, None, :])[:, None]
        # a draw that would leave the current best unchanged gets its signs flipped
        proposal = np.clip(img + signs, 0.0, 1.0)
        unchanged = ((proposal == x_best) | ~window).reshape(n, -1).all(axis=1)
        signs = np.where(unchanged[:, None, None, None], -signs, signs)
        new_delta = np.where(window, signs, delta)
        idx = np.flatnonzero(active)
        cand = np.clip(img[idx] + new_delta[idx], 0.0, 1.0)
        logits = logits_of(net, cand.reshape((len(idx),) + x.shape[1:]).astype(np.float32))
        queries[idx] += 1
        m = margin_values(logits, y[idx])
        better = m < best_margin[idx]
        take = idx[better]
        best_margin[take] = m[better]
        delta[take] = new_delta[take]
        x_best[take] = cand[better]
        success[take] |= predict_logits(logits)[better] != y[take]

    x_adv = x_best.reshape(x.shape).astype(np.float32)
    return AttackOutcome(success, x_adv, norm_of(x_adv - x, "linf"), queries, -best_margin)
