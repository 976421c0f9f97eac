"""Mini-batch training loop shared by every method."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import ConfigError, NumericError
from .nn import DenseNet, OPTIMIZERS, OptimizerState, dense_backward, dense_forward, optimizer_step, task_loss

# stream tags mixed into the seed so shuffling and dropout never share draws with init
SHUFFLE_STREAM = 7_000_001
DROPOUT_STREAM = 7_000_002


@dataclass
class TrainConfig:
    """Optimisation settings shared by DEN and all baselines.

    ``trunk_step`` selects whether the DEN trunk takes one optimiser step per
    branch visit (``"per_branch"``) or one per batch using the branch-averaged
    gradient (``"per_batch"``). ``trunk_masks`` controls whether trunk dropout
    draws fresh masks for each branch visit (``"independent"``) or reuses one
    mask per batch (``"shared"``).
    """

    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    trunk_learning_rate: float | None = None
    trunk_step: str = "per_branch"
    shuffle_branches: bool = False
    trunk_masks: str = "independent"

    def __post_init__(self):
        if int(self.epochs) < 0:
            raise ConfigError(f"epochs: must be >= 0, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if not float(self.learning_rate) > 0:
            raise ConfigError(f"learning_rate: must be > 0, got {self.learning_rate}")
        if self.trunk_learning_rate is not None and not float(self.trunk_learning_rate) > 0:
            raise ConfigError(f"trunk_learning_rate: must be > 0, got {self.trunk_learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer: expected one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.trunk_step not in ("per_branch", "per_batch"):
            raise ConfigError(f"trunk_step: expected per_branch or per_batch, got {self.trunk_step!r}")
        if self.trunk_masks not in ("independent", "shared"):
            raise ConfigError(f"trunk_masks: expected independent or shared, got {self.trunk_masks!r}")

    @property
    def trunk_lr(self) -> float:
        return self.learning_rate if self.trunk_learning_rate is None else self.trunk_learning_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, where: str = "train") -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key {where}.{key!r}")
        return cls(**d)


@dataclass
class TrainLog:
    """Per-epoch mean loss, one column per ensemble member (or branch)."""

    losses: list = field(default_factory=list)

    @property
    def final(self) -> list:
        return self.losses[-1] if self.losses else []

    def to_dict(self) -> dict:
        return {"losses": [list(map(float, row)) for row in self.losses]}


def training_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(shuffle, dropout) generators for a training run seeded with ``seed``."""
    return (np.random.default_rng([int(seed), SHUFFLE_STREAM]),
            np.random.default_rng([int(seed), DROPOUT_STREAM]))


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def check_loss(loss: float, epoch: int, member: int | None = None) -> None:
    if not np.isfinite(loss):
        where = f"epoch {epoch}" + ("" if member is None else f", branch {member}")
        raise NumericError(f"non-finite training loss at {where}")


def train_net(net: DenseNet, features, targets, task: str, config: TrainConfig, seed: int) -> TrainLog:
    """Train a single network in place. Returns a one-column :class:`TrainLog`."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets)
    shuffle_rng, dropout_rng = training_rngs(seed)
    state = OptimizerState.for_net(net, config.optimizer, config.learning_rate)
    net.train()
    log = TrainLog()
    for epoch in range(int(config.epochs)):
        total, n_batches = 0.0, 0
        for idx in minibatches(len(X), int(config.batch_size), shuffle_rng):
            _, cache = dense_forward(net, X[idx], dropout_rng)
            loss, grad, wrt = task_loss(net, cache, y[idx], task)
            check_loss(loss, epoch)
            grads = dense_backward(net, cache, grad, wrt=wrt)
            optimizer_step(net, grads, state)
            total += loss
            n_batches += 1
        log.losses.append([float(total / n_batches)])
    net.infer()
    return log
