"""Sample-wise analysis of dense/pruned pairs: populations, distances, statistics, reports."""

from .populations import (POPULATIONS, PopulationLabel, SampleRecord, attach_distances, boundary_distance_signed,
                          partition_populations, population_counts)
from .reports import (boundary_grid, boundary_grid_export, disagreement_in_band, fmt_p, robustness_row,
                      robustness_table, scatter_export, stats_row, stats_table, write_csv)
from .stats import StatResult, auc_lower, mann_whitney_u

__all__ = [
    "POPULATIONS",
    "PopulationLabel",
    "SampleRecord",
    "StatResult",
    "attach_distances",
    "auc_lower",
    "boundary_distance_signed",
    "boundary_grid",
    "boundary_grid_export",
    "disagreement_in_band",
    "fmt_p",
    "mann_whitney_u",
    "partition_populations",
    "population_counts",
    "robustness_row",
    "robustness_table",
    "scatter_export",
    "stats_row",
    "stats_table",
    "write_csv",
]
