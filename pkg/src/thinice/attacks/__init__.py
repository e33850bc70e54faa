"""Evasion attacks and the worst-case ensemble evaluator."""

from .base import AttackConfig, AttackOutcome, OUTCOME_COLUMNS, write_outcomes_csv
from .ensemble import DEFAULT_COMPONENTS, EnsembleConfig, EnsembleResult, check_fixed_budget, ensemble_evaluate
from .fmn import FmnConfig, FmnResult, fmn
from .gradient import apgd, apgd_checkpoints, fgsm, pgd
from .square import square_attack

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "DEFAULT_COMPONENTS",
    "EnsembleConfig",
    "EnsembleResult",
    "FmnConfig",
    "FmnResult",
    "OUTCOME_COLUMNS",
    "apgd",
    "apgd_checkpoints",
    "check_fixed_budget",
    "ensemble_evaluate",
    "fgsm",
    "fmn",
    "pgd",
    "square_attack",
    "write_outcomes_csv",
]
