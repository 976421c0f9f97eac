"""Uncertainty and accuracy metrics over ensemble predictions.

Every method produces an :class:`EnsemblePrediction` (members x samples x
outputs) and every metric in this module consumes it without caring which
method made it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateInputError, InputError, ShapeError, TaskError

TASKS = ("classification", "regression")
PROB_TOL = 1e-6

# how the scalar classification variance is defined; stored in reports
CLASSIFICATION_VARIANCE = "across-member variance of the probability of the aggregated argmax class"


@dataclass
class EnsemblePrediction:
    values: np.ndarray
    task: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ShapeError(f"ensemble values must be members x samples x outputs, got {self.values.shape}")
        if self.task not in TASKS:
            raise TaskError(f"unknown task {self.task!r}")
        if self.task == "classification" and self.values.size:
            v = self.values
            if v.min() < -PROB_TOL or np.abs(v.sum(axis=2) - 1.0).max() > PROB_TOL:
                raise InputError("classification members must output probability vectors")

    @property
    def members(self) -> int:
        return self.values.shape[0]

    @property
    def samples(self) -> int:
        return self.values.shape[1]

    @property
    def out_dim(self) -> int:
        return self.values.shape[2]


@dataclass
class UncertaintyReport:
    mean_prediction: np.ndarray
    per_sample_confidence: np.ndarray | None
    per_sample_variance: np.ndarray
    per_sample_entropy: np.ndarray | None
    aggregates: dict = field(default_factory=dict)


def aggregate(pred: EnsemblePrediction) -> np.ndarray:
    """Arithmetic mean over members, shape N x out_dim."""
    if pred.members == 0:
        raise InputError("cannot aggregate an ensemble with zero members")
    return pred.values.mean(axis=0)


def _check_distribution(p: np.ndarray) -> None:
    if p.size == 0 or p.min() < 0 or np.any(np.abs(p.sum(axis=-1) - 1.0) > PROB_TOL):
        raise InputError("entropy requires non-negative entries summing to 1")


def predictive_entropy(prob_row) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = np.asarray(prob_row, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeError(f"expected a single probability vector, got shape {p.shape}")
    _check_distribution(p)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def entropy_rows(probs) -> np.ndarray:
    """Row-wise :func:`predictive_entropy` for an N x K matrix."""
    p = np.asarray(probs, dtype=np.float64)
    _check_distribution(p)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logs, axis=1)


def predictive_variance(pred: EnsemblePrediction) -> np.ndarray:
    """Population variance across members, one value per sample.

    Regression: variance of the (first) output. Classification: variance of
    the probability each member gives the class that wins after averaging.
    """
    v = pred.values
    if pred.members <= 1:
        return np.zeros(pred.samples)
    if pred.task == "classification":
        winner = np.argmax(v.mean(axis=0), axis=1)
        scalar = v[:, np.arange(pred.samples), winner]
    else:
        scalar = v[:, :, 0]
    # shift by member 0 first so identical members give exactly 0
    d = scalar - scalar[0]
    centred = d - d.mean(axis=0)
    return np.mean(centred * centred, axis=0)


def confidence(mean_row, task: str = "classification") -> float:
    """Largest entry of an aggregated probability vector."""
    if task != "classification":
        raise TaskError("confidence is only defined for classification outputs")
    row = np.asarray(mean_row, dtype=np.float64)
    return float(row.max())


def confidence_rows(mean_prediction) -> np.ndarray:
    return np.asarray(mean_prediction, dtype=np.float64).max(axis=1)


def accuracy(mean_prediction, labels) -> float:
    """Percentage of rows whose argmax equals the label (ties go to the lowest index)."""
    mp = np.asarray(mean_prediction, dtype=np.float64)
    labels = np.asarray(labels)
    if mp.ndim != 2 or labels.shape != (mp.shape[0],):
        raise ShapeError(f"prediction {mp.shape} and labels {labels.shape} do not line up")
    if labels.size == 0:
        raise InputError("accuracy of an empty set is undefined")
    if labels.min() < 0 or labels.max() >= mp.shape[1]:
        raise InputError(f"labels must lie in [0, {mp.shape[1] - 1}]")
    # np.argmax returns the first maximal index, i.e. the lowest class on ties
    return float(np.mean(np.argmax(mp, axis=1) == labels) * 100.0)


def regression_metrics(pred, truth) -> tuple[float, float, float]:
    """(MSE, MAE, R^2) of predictions against targets."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"{pred.shape[0]} predictions for {truth.shape[0]} targets")
    if truth.size < 2:
        raise DegenerateInputError("R^2 needs at least two targets")
    resid = truth - pred
    ss_res = float(np.sum(resid * resid))
    dev = truth - truth.mean()
    ss_tot = float(np.sum(dev * dev))
    if ss_tot == 0.0:
        raise DegenerateInputError("R^2 is undefined for a constant target vector")
    mse = ss_res / truth.size
    mae = float(np.mean(np.abs(resid)))
    return mse, mae, 1.0 - ss_res / ss_tot


def uncertainty_report(pred: EnsemblePrediction) -> UncertaintyReport:
    mean = aggregate(pred)
    variance = predictive_variance(pred)
    aggregates = {"avg_variance": float(variance.mean()) if variance.size else math.nan}
    if pred.task == "classification":
        conf = confidence_rows(mean)
        ent = entropy_rows(mean)
        aggregates["avg_confidence"] = float(conf.mean())
        aggregates["avg_entropy"] = float(ent.mean())
    else:
        conf = ent = None
        aggregates["avg_confidence"] = math.nan
        aggregates["avg_entropy"] = math.nan
    return UncertaintyReport(mean, conf, variance, ent, aggregates)
