"""scikit-learn compatible wrappers around the four ensemble methods.

>>> from divnet import EnsembleRegressor
>>> reg = EnsembleRegressor(method="den", n_members=5, epochs=50).fit(X, y)   # doctest: +SKIP
>>> mean, std = reg.predict(X_new, return_std=True)                          # doctest: +SKIP

The estimators follow the usual contract (hyperparameters stored verbatim in
``__init__``, learned state in trailing-underscore attributes, ``fit`` returns
``self``), so they work with ``clone``, ``Pipeline`` and ``GridSearchCV``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baselines import baseline_arch, baseline_predict, bootstrap_train, ensemble_train, mc_dropout_train
from .data import Dataset
from .den import DenSpec, den_init, den_predict, den_train
from .exceptions import ConfigError
from .metrics import EnsemblePrediction, UncertaintyReport, aggregate, uncertainty_report
from .training import TrainConfig

METHODS = ("den", "ensemble", "mc_dropout", "bootstrap")


class _BaseEnsemble(BaseEstimator):
    _task = ""

    def __init__(self, method="den", trunk_layers=(64,), branch_layers=(64,), activation="tanh",
                 dropout=0.0, n_members=5, mc_passes=10, mc_dropout=0.1, epochs=100,
                 batch_size=64, learning_rate=1e-3, optimizer="adam", trunk_step="per_branch",
                 random_state=0):
        self.method = method
        self.trunk_layers = trunk_layers
        self.branch_layers = branch_layers
        self.activation = activation
        self.dropout = dropout
        self.n_members = n_members
        self.mc_passes = mc_passes
        self.mc_dropout = mc_dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.trunk_step = trunk_step
        self.random_state = random_state

    def _fit(self, X, targets, output_dim):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        seed = 0 if self.random_state is None else int(self.random_state)
        spec = DenSpec.build(X.shape[1], self.trunk_layers, self.branch_layers, output_dim, self._task,
                             int(self.n_members), self.activation, float(self.dropout))
        config = TrainConfig(epochs=int(self.epochs), batch_size=int(self.batch_size),
                             learning_rate=float(self.learning_rate), optimizer=self.optimizer,
                             trunk_step=self.trunk_step)
        train = Dataset(X, targets, self._task)
        if self.method == "den":
            model = den_init(spec, seed)
            log = den_train(model, X, targets, config, seed)
        elif self.method == "ensemble":
            model = ensemble_train(spec.flat, self.n_members, train, config, seed)
            log = model.log
        elif self.method == "bootstrap":
            model = bootstrap_train(spec.flat, self.n_members, train, config, seed)
            log = model.log
        else:
            rate = float(self.dropout) or float(self.mc_dropout)
            model = mc_dropout_train(baseline_arch(spec, rate), int(self.mc_passes), train, config, seed)
            log = model.log
        self.model_ = model
        self.spec_ = spec
        self.loss_curve_ = log.losses
        self.n_features_in_ = X.shape[1]
        return self

    def predict_members(self, X) -> EnsemblePrediction:
        """Raw per-member outputs, members x samples x outputs."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, estimator was fitted with {self.n_features_in_}")
        if self.method == "den":
            return den_predict(self.model_, X)
        seed = 0 if self.random_state is None else int(self.random_state)
        return baseline_predict(self.model_, X, seed)

    def predict_uncertainty(self, X) -> UncertaintyReport:
        return uncertainty_report(self.predict_members(X))

    @property
    def n_parameters_(self) -> int:
        check_is_fitted(self, "model_")
        return self.model_.parameter_count


class EnsembleRegressor(RegressorMixin, _BaseEnsemble):
    """Ensemble regressor; ``method`` picks DEN or one of the baselines."""

    _task = "regression"

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        return self._fit(X, y.astype(np.float64), 1)

    def predict(self, X, return_std=False):
        pred = self.predict_members(X)
        mean = aggregate(pred)[:, 0]
        if return_std:
            return mean, pred.values[:, :, 0].std(axis=0)
        return mean


class EnsembleClassifier(ClassifierMixin, _BaseEnsemble):
    """Ensemble classifier with softmax outputs averaged over members."""

    _task = "classification"

    def __init__(self, method="den", trunk_layers=(256,), branch_layers=(128,), activation="relu",
                 dropout=0.2, n_members=5, mc_passes=10, mc_dropout=0.1, epochs=10,
                 batch_size=128, learning_rate=1e-3, optimizer="adam", trunk_step="per_branch",
                 random_state=0):
        super().__init__(method, trunk_layers, branch_layers, activation, dropout, n_members,
                         mc_passes, mc_dropout, epochs, batch_size, learning_rate, optimizer,
                         trunk_step, random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("classification needs at least two classes")
        return self._fit(X, encoded, len(self.classes_))

    def predict_proba(self, X):
        return aggregate(self.predict_members(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
