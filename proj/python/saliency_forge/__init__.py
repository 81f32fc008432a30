"""Attribution-map ensembles (mean, variance, RBM) and faithfulness metrics."""

from ._core import (
    OracleUnavailableError,
    RbmParams,
    TrainingDivergedError,
    ValidationError,
    deletion_auc,
    exact_log_likelihood,
    hidden_posterior,
    insertion_auc,
    irof_aoc,
    mean_ensemble,
    mirror_hidden_unit,
    noise_map,
    normalize_map,
    rbm_ensemble,
    slic,
    train_rbm,
    variance_ensemble,
)

__version__ = "0.1.0"
