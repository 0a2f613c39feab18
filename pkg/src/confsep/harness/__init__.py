"""Datasets, experiment drivers, configuration and report emission."""

from .data import GENERATORS, DataError, load_csv, make_synthetic, write_csv
from .experiments import (McnTaxonomy, RejectionReport, awpr_at_recall, mcn_experiment,
                          rejection_experiment)

__all__ = [
    "GENERATORS", "DataError", "load_csv", "make_synthetic", "write_csv",
    "McnTaxonomy", "RejectionReport", "awpr_at_recall", "mcn_experiment", "rejection_experiment",
]
