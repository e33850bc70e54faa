"""Rank statistics: lower-AUC and the two-sided Mann-Whitney U test.

Convention: for samples ``a`` and ``b``,

    U = #{(i, j): a_i < b_j} + 0.5 * #{(i, j): a_i == b_j}

so ``U / (n_a * n_b)`` is the probability that a random draw from ``a`` is
lower than a random draw from ``b`` (ties counted half). ``U`` comes from
the midrank sum of ``b`` in the pooled sample.

p-values are two-sided, ``min(1, 2 * min(P(U <= u), P(U >= u)))``:

* exact, from Gaussian-binomial counts, when min(n_a, n_b) <= 8 and there are no ties;
* exact, from a counting recursion over pooled midranks, when ties are
  present and both samples have at most 8 values;
* otherwise a normal approximation with tie-corrected variance and a 0.5
  continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels

EXACT_MAX = 8
LN10 = math.log(10.0)


@dataclass(frozen=True)
class StatResult:
    auc: float
    u_statistic: float
    p_value: float
    n_a: int
    n_b: int
    method: str
    log10_p: float

    def as_dict(self):
        return {"auc": self.auc, "u": self.u_statistic, "p": self.p_value, "n_a": self.n_a, "n_b": self.n_b,
                "method": self.method}


def _clean(a, name):
    v = np.asarray(a, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError(f"sample {name} is empty")
    if not np.isfinite(v).all():
        raise ValueError(f"sample {name} contains non-finite values")
    return v


def _u_and_ranks(a, b):
    ranks = kernels.midranks(np.concatenate([a, b]))
    nb = b.size
    u = float(ranks[a.size:].sum()) - nb * (nb + 1) / 2.0
    return u, ranks


def auc_lower(a, b):
    """P(draw from a < draw from b), ties counted half, via midrank sums."""
    a, b = _clean(a, "a"), _clean(b, "b")
    u, _ = _u_and_ranks(a, b)
    return u / (a.size * b.size)


def _two_sided(counts, index):
    """Two-sided p from integer-indexed null counts and the observed index."""
    total = counts.sum()
    lower = counts[:index + 1].sum() / total
    upper = counts[index:].sum() / total
    return min(1.0, 2.0 * min(lower, upper))


def _tied_counts(ranks, nb):
    """Null counts of twice the rank sum of ``nb`` values drawn from the pooled midranks."""
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    top = int(np.sort(doubled)[::-1][:nb].sum())
    dp = np.zeros((nb + 1, top + 1), dtype=np.float64)
    dp[0, 0] = 1.0
    for v in doubled:
        # iterate counts downwards so each value is used at most once
        for j in range(nb, 0, -1):
            dp[j, v:] += dp[j - 1, :top + 1 - v]
    return dp[nb]


def _normal_p(u, na, nb, ranks):
    n = na + nb
    _, ties = np.unique(ranks, return_counts=True)
    tie_term = float((ties ** 3 - ties).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0, 0.0
    z = max(abs(u - na * nb / 2.0) - 0.5, 0.0) / math.sqrt(var)
    p = math.erfc(z / math.sqrt(2.0))
    if p > 0:
        return min(1.0, p), math.log10(min(1.0, p))
    # erfc underflowed: asymptotic series for log erfc(x)
    x = z / math.sqrt(2.0)
    log_p = -x * x - math.log(x * math.sqrt(math.pi)) + math.log1p(-1.0 / (2 * x * x) + 3.0 / (4 * x ** 4))
    return 5e-324, log_p / LN10


def mann_whitney_u(a, b):
    """Mann-Whitney U test of ``a`` against ``b``; ``auc`` equals U / (n_a * n_b)."""
    a, b = _clean(a, "a"), _clean(b, "b")
    na, nb = a.size, b.size
    u, ranks = _u_and_ranks(a, b)
    tied = np.unique(ranks).size < ranks.size
    if not tied and min(na, nb) <= EXACT_MAX:
        counts = kernels.gaussian_binomial(na, nb)
        p = float(_two_sided(counts, int(round(u))))
        method = "exact"
    elif tied and max(na, nb) <= EXACT_MAX:
        counts = _tied_counts(ranks, nb)
        # U = R_b - nb(nb+1)/2, so 2U indexes the doubled rank-sum distribution shifted by nb(nb+1)
        p = float(_two_sided(counts, int(round(2 * u)) + nb * (nb + 1)))
        method = "exact"
    else:
        p, log10_p = _normal_p(u, na, nb, ranks)
        return StatResult(u / (na * nb), u, p, na, nb, "normal-approx", log10_p)
    return StatResult(u / (na * nb), u, p, na, nb, method, math.log10(p))
