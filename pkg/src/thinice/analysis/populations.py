"""Sample populations S_dp and signed boundary distances."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from ..attacks.fmn import FmnConfig, fmn
from ..errors import ShapeError
from ..nn import logits_of, margin_values, predict_logits

logger = logging.getLogger(__name__)


class PopulationLabel(str, Enum):
    """S_dp: d is dense correctness, p is pruned correctness."""

    S00 = "S00"
    S01 = "S01"
    S10 = "S10"
    S11 = "S11"

    @classmethod
    def of(cls, dense_correct, pruned_correct):
        return cls(f"S{int(bool(dense_correct))}{int(bool(pruned_correct))}")

    def __str__(self):
        return self.value


POPULATIONS = tuple(PopulationLabel)


@dataclass
class SampleRecord:
    sample_id: int
    true_label: int
    dense_pred: int
    pruned_pred: int
    population: PopulationLabel
    dense_logit_loss: float
    epsilon_signed: float = float("nan")
    converged: bool = True

    @property
    def dense_correct(self):
        return self.dense_pred == self.true_label

    def consistent(self):
        pop_ok = self.population == PopulationLabel.of(self.dense_correct, self.pruned_pred == self.true_label)
        if np.isnan(self.epsilon_signed):
            return pop_ok
        return pop_ok and ((self.epsilon_signed > 0) == self.dense_correct or self.epsilon_signed == 0)

    def as_dict(self):
        d = asdict(self)
        d["population"] = str(self.population)
        return d


def _check_pair(dense, pruned):
    if dense.classes != pruned.classes:
        raise ShapeError(f"class counts differ: dense {dense.classes}, pruned {pruned.classes}")
    if tuple(dense.input_shape) != tuple(pruned.input_shape):
        raise ShapeError(f"input shapes differ: {dense.input_shape} vs {pruned.input_shape}")


def partition_populations(dense, pruned, x, y, sample_ids=None):
    """One record per sample with both predictions, the dense logit loss and the S_dp label."""
    _check_pair(dense, pruned)
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    ids = np.arange(len(y)) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    dl = logits_of(dense, x)
    dp = predict_logits(dl)
    pp = predict_logits(logits_of(pruned, x))
    loss = margin_values(dl, y)
    return [SampleRecord(int(i), int(t), int(d), int(p), PopulationLabel.of(d == t, p == t), float(m))
            for i, t, d, p, m in zip(ids, y, dp, pp, loss)]


def boundary_distance_signed(dense, x, y, norm="linf", cfg: FmnConfig | None = None):
    """Signed FMN distance to the dense decision boundary, per sample.

    Correctly classified samples get +eps*. Misclassified samples get minus
    the distance back into the true class's region (FMN targeted at the
    label), so they are never positive. Returns (eps_signed, converged); a
    sample FMN could not move across the boundary gets +-inf and False.
    """
    cfg = (cfg or FmnConfig()).model_copy(update={"norm": norm})
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim == 1:
        x, y = x[None], y.reshape(1)
    correct = predict_logits(logits_of(dense, x)) == y
    eps = np.empty(len(y))
    converged = np.ones(len(y), dtype=bool)
    if correct.any():
        r = fmn(dense, x[correct], y[correct], cfg)
        eps[correct] = r.epsilon
        converged[correct] = r.converged
    wrong = ~correct
    if wrong.any():
        r = fmn(dense, x[wrong], y[wrong], cfg, target=y[wrong])
        eps[wrong] = -r.epsilon
        converged[wrong] = r.converged
    if not converged.all():
        logger.info("FMN did not converge on %d of %d samples", int((~converged).sum()), len(y))
    return eps, converged


def attach_distances(records, eps_signed, converged):
    for r, e, c in zip(records, eps_signed, converged):
        r.epsilon_signed = float(e)
        r.converged = bool(c)
    return records


def population_counts(records):
    counts = {p: 0 for p in POPULATIONS}
    for r in records:
        counts[r.population] += 1
    return counts
