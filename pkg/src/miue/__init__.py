"""Unlearnable examples through mutual-information reduction, at desk scale."""

__version__ = "0.1.0"

from .bench import (BoundCheckReport, ExperimentReport, TrainConfig, covariance_metric, measure_gaps,
                    run_experiment, spearman, train_victim, verify_theorem1)
from .data import BlobSpec, Dataset, ParseError, load_dataset, make_blobs, save_dataset
from .estimators import (MIConfig, MIEstimate, classwise_mi, estimate_mi, histogram_mi_1d, kde_mi_1d,
                         knn_mi, mine_mi, sliced_mi)
from .model import MlpSpec, ModelState, ce_loss, forward_features, forward_logits, init_model
from .poison import MiueConfig, PoisonBudget, PoisonSet, gen_ap, gen_em, gen_miue, gen_random, miue_loss
from .rng import RngState

__all__ = [
    "BoundCheckReport", "ExperimentReport", "TrainConfig", "covariance_metric", "measure_gaps",
    "run_experiment", "spearman", "train_victim", "verify_theorem1",
    "BlobSpec", "Dataset", "ParseError", "load_dataset", "make_blobs", "save_dataset",
    "MIConfig", "MIEstimate", "classwise_mi", "estimate_mi", "histogram_mi_1d", "kde_mi_1d",
    "knn_mi", "mine_mi", "sliced_mi",
    "MlpSpec", "ModelState", "ce_loss", "forward_features", "forward_logits", "init_model",
    "MiueConfig", "PoisonBudget", "PoisonSet", "gen_ap", "gen_em", "gen_miue", "gen_random", "miue_loss",
    "RngState",
]
