"""Python bindings for the lrmt translation workbench."""

from ._core import (
    Checkpoint,
    bleu4,
    load_checkpoint,
    mass_matrices,
    preprocess,
    prune_count,
    run_cli,
    select_prune_set,
    tokenize,
)

__all__ = [
    "Checkpoint",
    "bleu4",
    "load_checkpoint",
    "mass_matrices",
    "preprocess",
    "prune_count",
    "run_cli",
    "select_prune_set",
    "tokenize",
]
