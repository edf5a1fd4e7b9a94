"""Bayesian neural additive models with block-diagonal Laplace posteriors.

Small per-feature networks form an additive model; a linearized Laplace
approximation with one Gaussian block per network provides credible
intervals, a marginal-likelihood bound that drives automatic relevance
determination of features, and posterior-based scores for selecting
second-order feature interactions to fine-tune.
"""

from . import errors
from .data import (
    Dataset,
    FoldSpec,
    Standardization,
    apply_standardization,
    kfold,
    load_csv,
    standardize,
    synth_interaction,
    synth_toy,
)
from .interactions import (
    InteractionScore,
    LastLayerPosterior,
    finetune_with_interactions,
    fit_last_layer,
    gain_scores,
    mi_scores,
    mi_scores_blockwise,
    select_top_k,
)
from .laplace import (
    KroneckerPair,
    Posterior,
    PosteriorBlock,
    fit_block,
    fit_block_kfac,
    fit_posterior,
    log_marglik_bound,
    mackay_update,
    marglik_grad,
    predictive_variance,
)
from .model import (
    AdditiveModel,
    BernoulliLogit,
    GaussianRegression,
    TrainConfig,
    TrainResult,
    initialize_model,
    predict_distribution,
    train_map,
)
from .networks import FeatureNetwork, JointFeatureNetwork, init_joint_network, init_network

__version__ = "0.1.0"

__all__ = [
    "AdditiveModel",
    "BernoulliLogit",
    "Dataset",
    "FeatureNetwork",
    "FoldSpec",
    "GaussianRegression",
    "InteractionScore",
    "JointFeatureNetwork",
    "KroneckerPair",
    "LastLayerPosterior",
    "Posterior",
    "PosteriorBlock",
    "Standardization",
    "TrainConfig",
    "TrainResult",
    "apply_standardization",
    "errors",
    "finetune_with_interactions",
    "fit_block",
    "fit_block_kfac",
    "fit_last_layer",
    "fit_posterior",
    "gain_scores",
    "init_joint_network",
    "init_network",
    "initialize_model",
    "kfold",
    "load_csv",
    "log_marglik_bound",
    "mackay_update",
    "marglik_grad",
    "mi_scores",
    "mi_scores_blockwise",
    "predict_distribution",
    "predictive_variance",
    "select_top_k",
    "standardize",
    "synth_interaction",
    "synth_toy",
    "train_map",
]
