"""White-box fixed-budget attacks: FGSM, PGD and APGD."""

from __future__ import annotations

import math

import numpy as np

from ..errors import UnsupportedError
from ..nn import logits_of, predict_logits
from ..tensor import project_array
from .base import (AttackConfig, AttackOutcome, BestTracker, as_batch, bview, is_adversarial, norm_of,
                   objective, objective_and_grad, random_start)


def _direction(g, norm):
    if norm == "linf":
        return np.sign(g)
    n = norm_of(g, "l2")
    return g / bview(np.maximum(n, 1e-12), g.ndim)


def fgsm(net, x, y, eps):
    """One signed-gradient step of size ``eps`` on cross-entropy, clipped to [0, 1]."""
    x, y, _ = as_batch(x, y, None)
    _, g, logits = objective_and_grad(net, x, y, "ce")
    x_adv = project_array(x + eps * np.sign(g), x, eps, "linf", batched=True)
    obj, adv_logits = objective(net, x_adv, y, "ce")
    return AttackOutcome(
        success=predict_logits(adv_logits) != y,
        x_adv=x_adv,
        delta_norm=norm_of(x_adv - x, "linf"),
        queries=np.zeros(len(x), dtype=np.int64),
        best_loss=obj,
    )


def pgd(net, x, y, cfg: AttackConfig, sample_ids=None, target=None):
    """Projected gradient ascent with fixed step and random restarts.

    Restart 0 starts at ``x``; later restarts start at a uniform point of the
    ball drawn from the sample's own stream. Only post-step iterates are
    candidates. The returned point is the highest-objective adversarial
    iterate if one exists, otherwise the highest-objective iterate.
    Samples misclassified at delta = 0 succeed immediately with x_adv = x.
    """
    x, y, ids = as_batch(x, y, sample_ids)
    clean_wrong = predict_logits(logits_of(net, x)) != y
    tracker = BestTracker(x)
    step = cfg.pgd_step()
    for r in range(cfg.restarts):
        xa = x.copy() if r == 0 else random_start(x, cfg.eps, cfg.norm, cfg.seed, ids, r)
        for s in range(cfg.steps):
            obj, g, logits = objective_and_grad(net, xa, y, cfg.loss, target)
            if s > 0:
                tracker.update(xa, obj, is_adversarial(logits, y, target))
            xa = project_array(xa + step * _direction(g, cfg.norm), x, cfg.eps, cfg.norm, batched=True)
        obj, logits = objective(net, xa, y, cfg.loss, target)
        tracker.update(xa, obj, is_adversarial(logits, y, target))
    return tracker.result(x, clean_wrong, cfg.norm)


def apgd_checkpoints(steps):
    """Iterations at which APGD reconsiders its step size.

    The first check sits at ceil(0.22 * steps); each gap then shrinks by
    ceil(0.03 * steps) down to a floor of ceil(0.06 * steps).
    """
    gap = max(math.ceil(0.22 * steps), 1)
    decr = max(math.ceil(0.03 * steps), 1)
    floor = max(math.ceil(0.06 * steps), 1)
    points, at = [], gap
    while at <= steps:
        points.append(at)
        gap = max(gap - decr, floor)
        at += gap
    return points


def _apgd_run(net, x, y, x0, cfg, kind, target, rho=0.75):
    """One APGD descent from ``x0``. Returns the tracker and the per-sample step-size history."""
    n, nd = len(x), x.ndim
    eps = cfg.eps
    tracker = BestTracker(x)
    eta = np.full(n, 2.0 * eps)
    etas = [eta.copy()]
    checks = set(apgd_checkpoints(cfg.steps))

    xk = x0.copy()
    obj, g, logits = objective_and_grad(net, xk, y, kind, target)
    tracker.update(xk, obj, is_adversarial(logits, y, target))
    x_best, g_best, loss_best = xk.copy(), g.copy(), obj.copy()
    history = [obj.copy()]
    x_prev = xk.copy()
    last_check = 0
    loss_best_last = loss_best.copy()
    reduced_last = np.ones(n, dtype=bool)

    for i in range(cfg.steps):
        a = 0.75 if i > 0 else 1.0
        z = project_array(xk + bview(eta, nd) * _direction(g, cfg.norm), x, eps, cfg.norm, batched=True)
        x_new = project_array(xk + a * (z - xk) + (1 - a) * (xk - x_prev), x, eps, cfg.norm, batched=True)
        x_prev, xk = xk, x_new
        obj, g, logits = objective_and_grad(net, xk, y, kind, target)
        tracker.update(xk, obj, is_adversarial(logits, y, target))
        history.append(obj.copy())
        improved = obj > loss_best
        loss_best = np.where(improved, obj, loss_best)
        x_best[improved] = xk[improved]
        g_best[improved] = g[improved]

        it = i + 1
        if it in checks:
            window = np.array(history[last_check:it + 1])
            increases = (window[1:] > window[:-1]).sum(axis=0)
            osc = increases <= (it - last_check) * rho
            stalled = ~reduced_last & (loss_best_last >= loss_best)
            reduce = osc | stalled
            eta = np.where(reduce, eta / 2.0, eta)
            xk[reduce] = x_best[reduce]
            g[reduce] = g_best[reduce]
            reduced_last = reduce
            loss_best_last = loss_best.copy()
            last_check = it
        etas.append(eta.copy())
    return tracker, np.array(etas)


def _targets_for(logits, y, count):
    """Other classes ordered by clean logit, highest first."""
    z = np.array(logits, dtype=np.float64, copy=True)
    z[np.arange(len(z)), y] = -np.inf
    order = np.argsort(-z, axis=1, kind="stable")
    return [order[:, j] for j in range(min(count, z.shape[1] - 1))]


def apgd(net, x, y, cfg: AttackConfig, sample_ids=None):
    """Auto-PGD with adaptive step size (linf or l2).

    The step starts at 2*eps with momentum 0.75 and is halved at a
    checkpoint when fewer than 75% of the steps since the last checkpoint
    increased the objective, or when the previous checkpoint did not halve
    and the best objective has not improved; a halving also moves the
    iterate back to the best point so far. Restart 0 starts at ``x``.
    ``cfg.targets`` runs the targeted variant over that many classes.
    """
    x, y, ids = as_batch(x, y, sample_ids)
    if cfg.steps < 2:
        raise ValueError("apgd needs at least two steps")
    logits = logits_of(net, x)
    c = logits.shape[1]
    if cfg.loss == "dlr" and c < 3:
        raise UnsupportedError("dlr loss needs at least three classes")
    clean_wrong = predict_logits(logits) != y
    targets = _targets_for(logits, y, cfg.targets) if cfg.targets else [None]

    overall = BestTracker(x)
    for t in targets:
        for r in range(cfg.restarts):
            x0 = x.copy() if r == 0 else random_start(x, cfg.eps, cfg.norm, cfg.seed, ids, r)
            run, _ = _apgd_run(net, x, y, x0, cfg, cfg.loss, t)
            overall.update(run.best_x, run.best_obj, np.zeros(len(x), dtype=bool))
            if run.found.any():
                overall.update(run.adv_x, np.where(run.found, run.adv_obj, -np.inf), run.found)
    return overall.result(x, clean_wrong, cfg.norm)
