"""Torsion function, principal Dirichlet eigenvalue and shape-inequality audits
on rasterized planar domains."""

from .audit import CHECK_IDS, BoundReport, FunctionalSummary, audit_summary, summarize
from .constants import PaperConstants, paper_constants
from .errors import TorsionLabError
from .experiments import (ExperimentConfig, run_corpus_audit, run_oracle_suite, sweep_dumbbell,
                          sweep_punctured)
from .geometry import (Annulus, Bitmap, Disk, Dumbbell, DomainMask, GridSpec, LShape, Polygon,
                       PuncturedSquare, Rectangle, distance_field, rasterize, topology_check)
from .solver import richardson, solve_green_column, solve_principal_eigen, solve_torsion

__version__ = "0.1.0"

__all__ = [
    "CHECK_IDS", "BoundReport", "FunctionalSummary", "audit_summary", "summarize",
    "PaperConstants", "paper_constants", "TorsionLabError",
    "ExperimentConfig", "run_corpus_audit", "run_oracle_suite", "sweep_dumbbell",
    "sweep_punctured",
    "Annulus", "Bitmap", "Disk", "Dumbbell", "DomainMask", "GridSpec", "LShape", "Polygon",
    "PuncturedSquare", "Rectangle", "distance_field", "rasterize", "topology_check",
    "richardson", "solve_green_column", "solve_principal_eigen", "solve_torsion",
]
