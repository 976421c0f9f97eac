"""Comparison methods: deep ensembles, MC dropout and bootstrap ensembles.

They all answer ``predict`` with an :class:`EnsemblePrediction`, so metrics and
the benchmark harness treat them exactly like a DEN.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .den import DenSpec
from .exceptions import ConfigError, InputError
from .metrics import EnsemblePrediction
from .nn import DenseNet, LayerSpec, dense_forward, predict, stack_macs
from .training import TrainConfig, TrainLog, train_net
from . import data as data_mod


def baseline_arch(spec: DenSpec, dropout: float | None = None) -> list:
    """Trunk and branch layers stacked into one standalone network.

    ``dropout`` replaces the rate on every hidden layer when given.
    """
    layers = list(spec.flat)
    if dropout is None:
        return layers
    return [
        LayerSpec(s.input_dim, s.output_dim, s.activation, dropout if i < len(layers) - 1 else 0.0)
        for i, s in enumerate(layers)
    ]


def _task_of(arch) -> str:
    return "classification" if arch[-1].activation == "softmax" else "regression"


def _merge_logs(logs) -> TrainLog:
    return TrainLog([[row[0] for row in rows] for rows in zip(*(log.losses for log in logs))])


@dataclass
class DeepEnsemble:
    members: list
    task: str
    log: TrainLog = field(default_factory=TrainLog)
    kind = "ensemble"

    @property
    def arch(self) -> list:
        return self.members[0].specs

    @property
    def parameter_count(self) -> int:
        return sum(m.parameter_count for m in self.members)

    def predict_macs(self, n_samples: int = 1) -> int:
        return len(self.members) * stack_macs(self.arch, n_samples)


@dataclass
class BootstrapEnsemble(DeepEnsemble):
    resample_seeds: list = field(default_factory=list)
    kind = "bootstrap"


@dataclass
class McDropoutModel:
    net: DenseNet
    passes: int
    task: str
    log: TrainLog = field(default_factory=TrainLog)
    kind = "mc_dropout"

    def __post_init__(self):
        if int(self.passes) < 2:
            raise ConfigError(f"mc_passes: must be >= 2, got {self.passes}")

    @property
    def arch(self) -> list:
        return self.net.specs

    @property
    def parameter_count(self) -> int:
        return self.net.parameter_count

    def predict_macs(self, n_samples: int = 1) -> int:
        return self.passes * stack_macs(self.arch, n_samples)


def ensemble_train(arch, K: int, train_set: data_mod.Dataset, config: TrainConfig, seed: int) -> DeepEnsemble:
    """K independent networks; member ``i`` is initialised and trained with ``seed + i``."""
    task = _task_of(arch)
    members, logs = [], []
    for i in range(int(K)):
        net = DenseNet.from_specs(arch, seed + i)
        logs.append(train_net(net, train_set.features, train_set.labels, task, config, seed + i))
        members.append(net)
    return DeepEnsemble(members, task, _merge_logs(logs))


def bootstrap_train(arch, K: int, train_set: data_mod.Dataset, config: TrainConfig, seed: int) -> BootstrapEnsemble:
    """Like :func:`ensemble_train`, but member ``i`` sees a with-replacement resample drawn from ``seed + i``."""
    if len(train_set) == 0:
        raise InputError("cannot bootstrap an empty dataset")
    task = _task_of(arch)
    members, logs, seeds = [], [], []
    for i in range(int(K)):
        rs = seed + i
        sample = data_mod.resample_with_replacement(train_set, rs)
        net = DenseNet.from_specs(arch, seed + i)
        logs.append(train_net(net, sample.features, sample.labels, task, config, seed + i))
        members.append(net)
        seeds.append(rs)
    return BootstrapEnsemble(members, task, _merge_logs(logs), resample_seeds=seeds)


def mc_dropout_train(arch, passes: int, train_set: data_mod.Dataset, config: TrainConfig, seed: int) -> McDropoutModel:
    if not any(s.dropout_rate > 0 for s in arch):
        raise ConfigError("mc_dropout: every layer has dropout_rate 0, predictions would not vary")
    task = _task_of(arch)
    net = DenseNet.from_specs(arch, seed)
    log = train_net(net, train_set.features, train_set.labels, task, config, seed)
    return McDropoutModel(net, passes, task, log)


def mc_dropout_predict(model: McDropoutModel, batch, seed: int = 0) -> EnsemblePrediction:
    """``passes`` forward passes with dropout active; one member per pass."""
    if not model.net.has_dropout:
        raise ConfigError("mc_dropout: every layer has dropout_rate 0, predictions would not vary")
    rng = np.random.default_rng(seed)
    mode = model.net.mode
    model.net.mode = "train"
    try:
        outs = [dense_forward(model.net, batch, rng)[0] for _ in range(model.passes)]
    finally:
        model.net.mode = mode
    return EnsemblePrediction(np.stack(outs), model.task)


def baseline_predict(model, batch, seed: int = 0) -> EnsemblePrediction:
    if isinstance(model, McDropoutModel):
        return mc_dropout_predict(model, batch, seed)
    return EnsemblePrediction(np.stack([predict(m, batch) for m in model.members]), model.task)
