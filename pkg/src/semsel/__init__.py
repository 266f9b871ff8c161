"""Attribute subset selection for zero-shot learning with a semantic autoencoder."""

__version__ = "0.1.0"

from .data import (
    ClassSplit,
    SemanticSpace,
    VisualSet,
    ZslBundle,
    load_bundle,
    save_bundle,
)
from .ga import GaConfig, multi_run, run_ga
from .partition import build_fold_plan, fold_views, verify_fold_plan
from .rankers import RankerSpec, rank_attributes
from .rfs import run_rfs
from .sae import SaeModel, SaeSettings, train_sae

__all__ = [
    "ClassSplit", "GaConfig", "RankerSpec", "SaeModel", "SaeSettings", "SemanticSpace", "VisualSet",
    "ZslBundle", "build_fold_plan", "fold_views", "load_bundle", "multi_run", "rank_attributes",
    "run_ga", "run_rfs", "save_bundle", "train_sae", "verify_fold_plan",
]
