"""Learned causal feature attribution for black-box models.

Causal importance targets are computed by masking feature groups and
measuring the loss increase of the target model; an MLP explainer is then
trained on those targets with a KL objective, and bootstrap ensembles of
explainers provide per-feature confidence intervals.
"""

from .causal_targets import delta_eps, masked_errors, normalize_omega, precompute_targets
from .core import BlackBoxModel, ContractError, FunctionModel, LossFunction
from .explainer import ExplainerModel, direct_omega_attribution, explain, load_explainer, save_explainer, train_explainer
from .masking import FeatureGrouping, MaskingStrategy, grid_grouping, identity_grouping, mask_group
from .nn import TrainConfig
from .uncertainty import BootstrapEnsemble, ensemble_attribute, train_ensemble

__version__ = "0.1.0"

__all__ = [
    "BlackBoxModel", "BootstrapEnsemble", "ContractError", "ExplainerModel", "FeatureGrouping",
    "FunctionModel", "LossFunction", "MaskingStrategy", "TrainConfig", "delta_eps",
    "direct_omega_attribution", "ensemble_attribute", "explain", "grid_grouping", "identity_grouping",
    "load_explainer", "mask_group", "masked_errors", "normalize_omega", "precompute_targets",
    "save_explainer", "train_ensemble", "train_explainer",
]
