"""Divergent ensemble networks and baseline ensembles in plain numpy."""
from .baselines import (
    BootstrapEnsemble,
    DeepEnsemble,
    McDropoutModel,
    baseline_predict,
    bootstrap_train,
    ensemble_train,
    mc_dropout_predict,
    mc_dropout_train,
)
from .den import DenModel, DenSpec, den_forward_all, den_init, den_predict, den_train
from .estimators import EnsembleClassifier, EnsembleRegressor
from .metrics import EnsemblePrediction, UncertaintyReport, uncertainty_report
from .nn import DenseNet, LayerSpec, gradient_check
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BootstrapEnsemble",
    "DeepEnsemble",
    "DenModel",
    "DenSpec",
    "DenseNet",
    "EnsembleClassifier",
    "EnsemblePrediction",
    "EnsembleRegressor",
    "LayerSpec",
    "McDropoutModel",
    "TrainConfig",
    "UncertaintyReport",
    "baseline_predict",
    "bootstrap_train",
    "den_forward_all",
    "den_init",
    "den_predict",
    "den_train",
    "ensemble_train",
    "gradient_check",
    "mc_dropout_predict",
    "mc_dropout_train",
    "uncertainty_report",
]
