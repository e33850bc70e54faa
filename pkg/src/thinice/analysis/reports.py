"""Report tables and plot-ready CSV exports.

Number formats are fixed: percentages with 2 decimals, AUC with 3, p-values
in scientific notation with one significant digit and no exponent padding
(``4e-170``). Non-applicable cells are written as ``n/a``; missing
reported baselines as empty strings.
"""

from __future__ import annotations

import csv
import math
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from ..errors import UnsupportedError
from ..nn import logits_of, margin_values, predict_logits
from .populations import POPULATIONS, PopulationLabel
from .stats import mann_whitney_u

NA = "n/a"

STATS_COLUMNS = ["method", "sparsity", "network", "n", "S00", "S01", "S10", "S11",
                 "auc_e10_lt_e11", "p_e10_lt_e11", "auc_abs_e01_lt_abs_e00", "p_abs_e01_lt_abs_e00",
                 "excluded_nonconverged"]
ROBUSTNESS_COLUMNS = ["method", "sparsity", "network", "rep_acc", "aa_acc", "rep_rob", "aa_rob", "drop", "pgd_rob"]
SCATTER_COLUMNS = ["sample_id", "dense_logit_loss", "epsilon_signed", "population"]
GRID_COLUMNS = ["x1", "x2", "pred"]


def fmt_pct(v):
    return NA if v is None else f"{v:.2f}"


def fmt_auc(v):
    return NA if v is None else f"{v:.3f}"


def fmt_p(p, log10_p=None):
    """One significant digit, e.g. 0.000412 -> '4e-4'. Uses log10_p when p underflowed."""
    if p is None:
        return NA
    # below the normal float range p has lost precision (or is the 5e-324 floor); trust log10_p there
    if p >= 1e-300 or log10_p is None:
        mant, exp = f"{p:.0e}".split("e")
        return f"{mant}e{int(exp)}"
    exp = math.floor(log10_p)
    mant = round(10 ** (log10_p - exp))
    if mant == 10:
        mant, exp = 1, exp + 1
    return f"{mant}e{exp}"


def fmt_sparsity(s):
    return f"{100 * s:.2f}"


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns] if isinstance(r, dict) else r)


def _percentages(records):
    n = len(records)
    counts = {p: 0 for p in POPULATIONS}
    for r in records:
        counts[r.population] += 1
    return {p: 100.0 * counts[p] / n for p in POPULATIONS}


def _compare(a, b):
    if len(a) == 0 or len(b) == 0:
        return NA, NA
    res = mann_whitney_u(a, b)
    return fmt_auc(res.auc), fmt_p(res.p_value, res.log10_p)


def stats_row(records, method="", sparsity=0.0, network=""):
    """One Table-2 style row.

    Percentages use every record. The two tests use converged records only:
    eps of S10 against S11, and |eps| of S01 against S00.
    """
    if not records:
        raise ValueError("stats row needs at least one record")
    pct = _percentages(records)
    ok = [r for r in records if r.converged and np.isfinite(r.epsilon_signed)]
    eps = {p: np.array([r.epsilon_signed for r in ok if r.population == p]) for p in POPULATIONS}
    auc1, p1 = _compare(eps[PopulationLabel.S10], eps[PopulationLabel.S11])
    auc0, p0 = _compare(np.abs(eps[PopulationLabel.S01]), np.abs(eps[PopulationLabel.S00]))
    row = {"method": method, "sparsity": fmt_sparsity(sparsity), "network": network, "n": len(records)}
    row.update({str(p): fmt_pct(pct[p]) for p in POPULATIONS})
    row.update({"auc_e10_lt_e11": auc1, "p_e10_lt_e11": p1, "auc_abs_e01_lt_abs_e00": auc0,
                "p_abs_e01_lt_abs_e00": p0, "excluded_nonconverged": len(records) - len(ok)})
    return row


def stats_table(cells):
    """Rows for an iterable of (method, sparsity, network, records)."""
    return [stats_row(recs, m, s, net) for m, s, net, recs in cells]


def _dec(v):
    return Decimal(f"{v:.2f}")


def robustness_row(method, sparsity, network, aa_acc, aa_rob, rep_acc=None, rep_rob=None, pgd_rob=None):
    """Table-1 style row; all values in percent. Drop = Rep.Rob - A.A.Rob, derived, never supplied."""
    drop = ""
    if rep_rob is not None:
        d = (_dec(rep_rob) - _dec(aa_rob)).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)
        drop = "0.00" if d == 0 else f"{d}"
    return {
        "method": method, "sparsity": fmt_sparsity(sparsity), "network": network,
        "rep_acc": "" if rep_acc is None else fmt_pct(rep_acc), "aa_acc": fmt_pct(aa_acc),
        "rep_rob": "" if rep_rob is None else fmt_pct(rep_rob), "aa_rob": fmt_pct(aa_rob),
        "drop": drop, "pgd_rob": "" if pgd_rob is None else fmt_pct(pgd_rob),
    }


def robustness_table(entries):
    """Rows from dicts with keys method, sparsity, network, aa_acc, aa_rob and optional rep_acc, rep_rob, pgd_rob."""
    return [robustness_row(**e) for e in entries]


def scatter_rows(records):
    """Dense logit loss against signed eps, one row per converged sample."""
    for r in records:
        if r.converged and np.isfinite(r.epsilon_signed):
            yield {"sample_id": r.sample_id, "dense_logit_loss": f"{r.dense_logit_loss:.8g}",
                   "epsilon_signed": f"{r.epsilon_signed:.8g}", "population": str(r.population)}


def scatter_export(records, path):
    rows = list(scatter_rows(records))
    write_csv(path, SCATTER_COLUMNS, rows)
    return len(rows)


def grid_points(bounds=((0.0, 1.0), (0.0, 1.0)), resolution=100):
    """Regular grid, x1 varying fastest; exactly resolution**2 points."""
    (a1, b1), (a2, b2) = bounds
    g1 = np.linspace(a1, b1, resolution)
    g2 = np.linspace(a2, b2, resolution)
    xx, yy = np.meshgrid(g1, g2)
    return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1).astype(np.float32)


def boundary_grid(net, bounds=((0.0, 1.0), (0.0, 1.0)), resolution=100):
    if tuple(net.input_shape) != (2,):
        raise UnsupportedError(f"boundary grids need 2-D inputs, network takes {net.input_shape}")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    pts = grid_points(bounds, resolution)
    logits = logits_of(net, pts)
    return pts, predict_logits(logits), logits


def boundary_grid_export(net, path, bounds=((0.0, 1.0), (0.0, 1.0)), resolution=100):
    pts, pred, _ = boundary_grid(net, bounds, resolution)
    write_csv(path, GRID_COLUMNS, ([f"{a:.6f}", f"{b:.6f}", int(c)] for (a, b), c in zip(pts, pred)))
    return len(pts)


def disagreement_in_band(dense, pruned, bounds=((0.0, 1.0), (0.0, 1.0)), resolution=100, band=0.10):
    """Fraction of grid cells where the two models disagree that lie in the dense low-|margin| band.

    The band holds the ``band`` fraction of grid cells with the smallest
    |margin| of the dense model (margin taken w.r.t. its own prediction).
    Returns (fraction, number of disagreeing cells); fraction is nan if none disagree.
    """
    _, dp, dl = boundary_grid(dense, bounds, resolution)
    _, pp, _ = boundary_grid(pruned, bounds, resolution)
    margin = np.abs(margin_values(dl, dp))
    cutoff = np.quantile(margin, band)
    disagree = dp != pp
    n = int(disagree.sum())
    if n == 0:
        return float("nan"), 0
    return float((margin[disagree] <= cutoff).mean()), n
