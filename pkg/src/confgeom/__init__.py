"""Conformal geometry of submanifolds: jets, Weyl structures, conformal geodesics,
embedding invariants and realizations, with a scenario-driven command line."""

__version__ = "0.1.0"

from .conformal import (  # noqa: E402
    ConformalChart,
    ConformalError,
    LaplaceStructure,
    MobiusStructure,
    WeylStructure,
)
from .embedding import Immersion, classify_geodesy, embedding_invariants  # noqa: E402
from .jets import parse  # noqa: E402

__all__ = [
    "__version__",
    "ConformalChart",
    "ConformalError",
    "LaplaceStructure",
    "MobiusStructure",
    "WeylStructure",
    "Immersion",
    "classify_geodesy",
    "embedding_invariants",
    "parse",
]
