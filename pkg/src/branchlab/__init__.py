"""Simulation and verification toolkit for controlled branching diffusions."""

__version__ = "0.1.0"

from branchlab.genealogy import Label, child_label, compare, is_strict_ancestor
from branchlab.measure import AtomicMeasure, PaddedMeasure, embed, integrate, wasserstein

__all__ = [
    "AtomicMeasure",
    "Label",
    "PaddedMeasure",
    "child_label",
    "compare",
    "embed",
    "integrate",
    "is_strict_ancestor",
    "wasserstein",
]
