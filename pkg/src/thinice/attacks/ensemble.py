"""Worst-case aggregation over an attack ensemble."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..nn import logits_of, predict_logits
from .base import AttackConfig, AttackOutcome, as_batch, norm_of
from .fmn import FmnConfig, fmn
from .gradient import apgd, fgsm, pgd
from .square import square_attack

logger = logging.getLogger(__name__)

DEFAULT_COMPONENTS = ("apgd-ce", "apgd-dlr", "square", "fmn", "apgd-t")
KNOWN_COMPONENTS = DEFAULT_COMPONENTS + ("pgd", "fgsm")


class EnsembleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    components: List[str] = Field(default_factory=lambda: list(DEFAULT_COMPONENTS))
    norm: Literal["linf", "l2"] = "linf"
    apgd_steps: int = Field(100, ge=2)
    apgd_restarts: int = Field(5, ge=1)
    targeted_restarts: int = Field(1, ge=1)
    max_targets: int = Field(9, ge=1)
    square_queries: int = Field(5000, ge=0)
    square_p_init: float = Field(0.8, gt=0, le=1)
    pgd_steps: int = Field(10, ge=1)
    pgd_restarts: int = Field(1, ge=1)
    pgd_step_size: float | None = None
    fmn: FmnConfig = Field(default_factory=FmnConfig)
    seed: int = Field(0, ge=0)

    @field_validator("components")
    @classmethod
    def _known(cls, v):
        unknown = [c for c in v if c not in KNOWN_COMPONENTS]
        if unknown:
            raise ValueError(f"unknown ensemble components {unknown}; known: {list(KNOWN_COMPONENTS)}")
        if not v:
            raise ValueError("ensemble needs at least one component")
        return v


@dataclass
class EnsembleResult:
    sample_ids: np.ndarray
    clean_correct: np.ndarray
    robust: np.ndarray
    broken_by: list
    outcomes: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    substituted: dict = field(default_factory=dict)
    fmn_epsilon: np.ndarray | None = None

    @property
    def clean_accuracy(self):
        return float(self.clean_correct.mean())

    @property
    def robust_accuracy(self):
        return float(self.robust.mean())

    def component_robust_accuracy(self, name):
        out = self.outcomes[name]
        return float((self.clean_correct & ~out.success).mean())

    def rows(self):
        for name, out in self.outcomes.items():
            yield from out.rows(name, self.sample_ids)


def _run_component(name, net, x, y, eps, cfg, ids, classes):
    """Run one component; returns (outcome, label) or (None, reason) when inapplicable."""
    if name == "fgsm":
        return fgsm(net, x, y, eps), name
    if name == "pgd":
        acfg = AttackConfig(eps=eps, norm=cfg.norm, steps=cfg.pgd_steps, restarts=cfg.pgd_restarts,
                            step_size=cfg.pgd_step_size, loss="ce", seed=cfg.seed)
        return pgd(net, x, y, acfg, ids), name
    if name == "apgd-ce":
        acfg = AttackConfig(eps=eps, norm=cfg.norm, steps=cfg.apgd_steps, restarts=cfg.apgd_restarts, loss="ce",
                            seed=cfg.seed)
        return apgd(net, x, y, acfg, ids), name
    if name == "apgd-dlr":
        loss = "dlr" if classes >= 3 else "margin"
        acfg = AttackConfig(eps=eps, norm=cfg.norm, steps=cfg.apgd_steps, restarts=cfg.apgd_restarts, loss=loss,
                            seed=cfg.seed)
        return apgd(net, x, y, acfg, ids), name if loss == "dlr" else "apgd-margin"
    if name == "apgd-t":
        if classes < 3:
            return None, "a binary task has a single target, already covered by the untargeted runs"
        acfg = AttackConfig(eps=eps, norm=cfg.norm, steps=cfg.apgd_steps, restarts=cfg.targeted_restarts,
                            loss="dlr", targets=min(classes - 1, cfg.max_targets), seed=cfg.seed)
        return apgd(net, x, y, acfg, ids), name
    if name == "square":
        if cfg.norm != "linf":
            return None, "square attack is implemented for linf only"
        acfg = AttackConfig(eps=eps, query_budget=cfg.square_queries, p_init=cfg.square_p_init, seed=cfg.seed)
        return square_attack(net, x, y, acfg, ids), name
    if name == "fmn":
        res = fmn(net, x, y, cfg.fmn.model_copy(update={"norm": cfg.norm}))
        success = res.epsilon <= eps
        x_adv = np.where(success.reshape((-1,) + (1,) * (x.ndim - 1)), res.x_adv, x)
        out = AttackOutcome(success=success, x_adv=x_adv, delta_norm=res.epsilon.copy(),
                            queries=np.zeros(len(x), dtype=np.int64), best_loss=-res.epsilon)
        return (out, res), name
    raise ValueError(f"unknown component {name!r}")


def ensemble_evaluate(net, x, y, eps, components=None, cfg: EnsembleConfig | None = None, sample_ids=None):
    """Robust accuracy under the worst case of every component.

    A sample counts as robust only if it is clean-correct and no component
    succeeds on it. Components run in the order given (default: apgd-ce,
    apgd-dlr, square, fmn, apgd-t) on every sample, so each component's
    own robust accuracy is available as well. FMN is a minimum-norm member:
    it succeeds iff its distance is within ``eps``.

    On two-class tasks the DLR loss is undefined; apgd-dlr then runs with
    the logit-margin loss and apgd-t is skipped. Both are reported.
    """
    cfg = cfg or EnsembleConfig()
    if components is not None:
        cfg = EnsembleConfig.model_validate({**cfg.model_dump(), "components": list(components)})
    x, y, ids = as_batch(x, y, sample_ids)
    if len(x) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    logits = logits_of(net, x)
    classes = logits.shape[1]
    clean_correct = predict_logits(logits) == y
    robust = clean_correct.copy()
    broken_by = ["" if c else "clean" for c in clean_correct]
    result = EnsembleResult(ids, clean_correct, robust, broken_by)

    for name in cfg.components:
        out, label = _run_component(name, net, x, y, eps, cfg, ids, classes)
        if out is None:
            logger.info("skipping %s: %s", name, label)
            result.skipped.append((name, label))
            continue
        if name == "fmn":
            out, res = out
            result.fmn_epsilon = res.epsilon
        if label != name:
            result.substituted[name] = label
        result.outcomes[label] = out
        newly = robust & out.success
        for i in np.flatnonzero(newly):
            broken_by[i] = label
        robust &= ~out.success
    return result


def check_fixed_budget(outcome, x, eps, norm="linf", tol=1e-6):
    """True iff every adversarial point lies in the eps-ball and the [0, 1] box."""
    x_adv = np.asarray(outcome.x_adv, dtype=np.float64)
    in_ball = norm_of(x_adv - np.asarray(x, dtype=np.float64), norm) <= eps + tol
    in_box = ((x_adv >= 0) & (x_adv <= 1)).reshape(len(x_adv), -1).all(axis=1)
    return bool((in_ball & in_box).all())
