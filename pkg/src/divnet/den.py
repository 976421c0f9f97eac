"""Divergent Ensemble Network: one shared trunk feeding K independent branches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, NumericError, SpecError, TaskError
from .metrics import EnsemblePrediction, TASKS
from .nn import (
    DenseNet,
    Gradients,
    LayerSpec,
    OptimizerState,
    concat,
    dense_backward,
    dense_forward,
    optimizer_step,
    predict,
    stack_macs,
    stack_params,
    task_loss,
    validate_stack,
)
from .training import TrainConfig, TrainLog, check_loss, minibatches, training_rngs


@dataclass(frozen=True)
class DenSpec:
    trunk: tuple
    branch: tuple
    branch_count: int
    task: str

    def __post_init__(self):
        object.__setattr__(self, "trunk", tuple(self.trunk))
        object.__setattr__(self, "branch", tuple(self.branch))
        if len(self.trunk) < 1:
            raise SpecError("trunk: needs at least one layer")
        if len(self.branch) < 1:
            raise SpecError("branch: needs at least one layer")
        if int(self.branch_count) < 1:
            raise SpecError(f"branch_count: must be >= 1, got {self.branch_count}")
        if self.task not in TASKS:
            raise SpecError(f"task: expected one of {TASKS}, got {self.task!r}")
        if self.trunk[-1].output_dim != self.branch[0].input_dim:
            raise SpecError(
                f"trunk output_dim {self.trunk[-1].output_dim} != branch input_dim "
                f"{self.branch[0].input_dim}"
            )
        if self.trunk[-1].activation == "softmax":
            raise SpecError("trunk: softmax is only allowed at the end of a branch")
        validate_stack(self.trunk)
        validate_stack(self.branch)
        last = self.branch[-1]
        if self.task == "classification":
            if last.activation != "softmax" or last.output_dim < 2:
                raise SpecError("classification branches must end in a softmax over >= 2 classes")
        elif last.activation != "identity" or last.output_dim != 1:
            raise SpecError("regression branches must end in an identity layer with output_dim 1")

    @property
    def flat(self) -> tuple:
        """Layers of one standalone trunk+branch network."""
        return self.trunk + self.branch

    @property
    def input_dim(self) -> int:
        return self.trunk[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.branch[-1].output_dim

    @property
    def parameter_count(self) -> int:
        return stack_params(self.trunk) + self.branch_count * stack_params(self.branch)

    def predict_macs(self, n_samples: int = 1) -> int:
        """Multiply-accumulates of one prediction: trunk once, every branch once."""
        return stack_macs(self.trunk, n_samples) + self.branch_count * stack_macs(self.branch, n_samples)

    def to_dict(self) -> dict:
        return {
            "trunk": [s.to_dict() for s in self.trunk],
            "branch": [s.to_dict() for s in self.branch],
            "branch_count": int(self.branch_count),
            "task": self.task,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenSpec":
        return cls(
            [LayerSpec.from_dict(s) for s in d["trunk"]],
            [LayerSpec.from_dict(s) for s in d["branch"]],
            int(d["branch_count"]),
            d["task"],
        )

    @classmethod
    def build(cls, input_dim: int, trunk_widths, branch_widths, output_dim: int, task: str,
              branch_count: int = 5, activation: str = "relu", dropout: float = 0.0) -> "DenSpec":
        """Spec from layer widths; hidden layers share ``activation`` and ``dropout``."""
        trunk_widths = list(trunk_widths)
        branch_widths = list(branch_widths)
        if not trunk_widths:
            raise SpecError("trunk: needs at least one hidden width")
        trunk, prev = [], int(input_dim)
        for w in trunk_widths:
            trunk.append(LayerSpec(prev, int(w), activation, dropout))
            prev = int(w)
        branch = []
        for w in branch_widths:
            branch.append(LayerSpec(prev, int(w), activation, dropout))
            prev = int(w)
        final = "softmax" if task == "classification" else "identity"
        branch.append(LayerSpec(prev, int(output_dim), final, 0.0))
        return cls(trunk, branch, branch_count, task)


class DenModel:
    """Trunk network plus ``K`` branch networks of identical architecture."""

    def __init__(self, spec: DenSpec, trunk: DenseNet, branches: list):
        if len(branches) != spec.branch_count:
            raise SpecError(f"expected {spec.branch_count} branches, got {len(branches)}")
        self.spec = spec
        self.trunk = trunk
        self.branches = list(branches)

    @property
    def parameter_count(self) -> int:
        return self.trunk.parameter_count + sum(b.parameter_count for b in self.branches)

    @property
    def mode(self) -> str:
        return self.trunk.mode

    @mode.setter
    def mode(self, value: str) -> None:
        for net in [self.trunk, *self.branches]:
            net.mode = value

    def train(self) -> "DenModel":
        self.mode = "train"
        return self

    def infer(self) -> "DenModel":
        self.mode = "infer"
        return self

    def path(self, b: int) -> DenseNet:
        """Standalone copy of trunk followed by branch ``b``."""
        return concat([self.trunk, self.branches[b]])

    def copy(self) -> "DenModel":
        return DenModel(self.spec, self.trunk.copy(), [b.copy() for b in self.branches])

    def __repr__(self):
        return (f"DenModel(K={self.spec.branch_count}, task={self.spec.task}, "
                f"params={self.parameter_count})")


def den_init(spec: DenSpec, seed: int) -> DenModel:
    """Trunk from ``seed``; branch ``i`` from ``seed + i``.

    Layers draw from ``default_rng([seed, layer_index])`` with the layer index
    counted over the whole trunk+branch stack, so branch 0 together with the
    trunk is exactly the standalone network a plain MLP would get from ``seed``.
    """
    n_trunk = len(spec.trunk)
    trunk = DenseNet.from_specs(spec.trunk, seed)
    branches = [
        DenseNet.from_specs(spec.branch, seed + i, layer_offset=n_trunk)
        for i in range(spec.branch_count)
    ]
    return DenModel(spec, trunk, branches)


def _check_input(model: DenModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return x


def den_forward_all(model: DenModel, batch, rng=None) -> EnsemblePrediction:
    """Every branch's output on ``batch`` with the trunk evaluated once.

    Honors the model's mode: in train mode dropout masks are drawn from ``rng``.
    """
    x = _check_input(model, batch)
    if model.mode == "infer":
        return den_predict(model, x)
    rng = np.random.default_rng(rng)
    shared, _ = dense_forward(model.trunk, x, rng)
    outs = [dense_forward(branch, shared, rng)[0] for branch in model.branches]
    return EnsemblePrediction(np.stack(outs), model.spec.task)


def den_predict(model: DenModel, batch) -> EnsemblePrediction:
    """Deterministic prediction (dropout off): one trunk pass, then each branch."""
    x = _check_input(model, batch)
    shared = predict(model.trunk, x)
    return EnsemblePrediction(
        np.stack([predict(branch, shared) for branch in model.branches]), model.spec.task
    )


def den_gradients(model: DenModel, batch, targets, weights, rng=None) -> tuple[Gradients, list]:
    """Gradients of ``sum_b weights[b] * loss_b`` for the trunk and every branch.

    Branch ``b`` only ever receives gradient from its own loss; a zero weight
    leaves its gradient exactly zero.
    """
    x = _check_input(model, batch)
    rng = np.random.default_rng(rng)
    shared, tcache = dense_forward(model.trunk, x, rng)
    trunk_up = np.zeros_like(shared)
    branch_grads = []
    for b, branch in enumerate(model.branches):
        _, bcache = dense_forward(branch, shared, rng)
        _, grad, wrt = task_loss(branch, bcache, targets, model.spec.task)
        g = dense_backward(branch, bcache, grad * weights[b], wrt=wrt)
        branch_grads.append(g)
        trunk_up += g.input
    return dense_backward(model.trunk, tcache, trunk_up), branch_grads


def den_train(model: DenModel, features, targets, config: TrainConfig, seed: int,
              task: str | None = None) -> TrainLog:
    """Branch-loop training.

    For every mini-batch, each branch in turn runs trunk+branch forward, takes
    its own loss, backpropagates into itself and the trunk, and steps. With
    ``trunk_step="per_batch"`` the trunk instead steps once per batch on the
    branch-averaged gradient.
    """
    if task is not None and task != model.spec.task:
        raise TaskError(f"dataset task {task!r} does not match model task {model.spec.task!r}")
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets)
    if len(X) == 0:
        raise InputError("cannot train on an empty dataset")
    K = model.spec.branch_count
    shuffle_rng, dropout_rng = training_rngs(seed)
    order_rng = np.random.default_rng([int(seed), 7_000_003])
    trunk_state = OptimizerState.for_net(model.trunk, config.optimizer, config.trunk_lr)
    branch_states = [OptimizerState.for_net(b, config.optimizer, config.learning_rate)
                     for b in model.branches]
    per_branch = config.trunk_step == "per_branch"
    model.train()
    log = TrainLog()
    for epoch in range(int(config.epochs)):
        sums = np.zeros(K)
        n_batches = 0
        for idx in minibatches(len(X), int(config.batch_size), shuffle_rng):
            xb, yb = X[idx], y[idx]
            visit = order_rng.permutation(K) if config.shuffle_branches else range(K)
            trunk_seed = dropout_rng.integers(2**63) if config.trunk_masks == "shared" else None
            acc = None
            for b in visit:
                branch = model.branches[b]
                trunk_rng = dropout_rng if trunk_seed is None else np.random.default_rng(trunk_seed)
                shared, tcache = dense_forward(model.trunk, xb, trunk_rng)
                _, bcache = dense_forward(branch, shared, dropout_rng)
                loss, grad, wrt = task_loss(branch, bcache, yb, model.spec.task)
                try:
                    check_loss(loss, epoch, b)
                    bgrads = dense_backward(branch, bcache, grad, wrt=wrt)
                    tgrads = dense_backward(model.trunk, tcache, bgrads.input)
                    optimizer_step(branch, bgrads, branch_states[b])
                    if per_branch:
                        optimizer_step(model.trunk, tgrads, trunk_state)
                    else:
                        acc = tgrads if acc is None else acc + tgrads
                except NumericError as exc:
                    raise NumericError(f"{exc} (epoch {epoch}, branch {b})") from exc
                sums[b] += loss
            if not per_branch:
                optimizer_step(model.trunk, acc.scaled(1.0 / K), trunk_state)
            n_batches += 1
        log.losses.append([float(s / n_batches) for s in sums])
    model.infer()
    return log
