"""In-context property prediction on molecular graphs."""

from ._core import (
    DataError,
    DimensionError,
    Error,
    Molecule,
    NumericError,
    ParseError,
    ValidationError,
    classify_ood,
    curriculum_weights,
    fit_minnorm,
    mine_patterns,
    read_dataset,
    run_cli,
    run_desk,
    write_dataset,
)

__all__ = [
    "DataError",
    "DimensionError",
    "Error",
    "Molecule",
    "NumericError",
    "ParseError",
    "ValidationError",
    "classify_ood",
    "curriculum_weights",
    "fit_minnorm",
    "mine_patterns",
    "read_dataset",
    "run_cli",
    "run_desk",
    "write_dataset",
]
