"""Minimal feed-forward network engine written directly against numpy.

Everything is float64. Parameters live in :class:`DenseNet`, the forward pass
returns a cache that the hand-written backward pass consumes, and
:func:`gradient_check` verifies the backward pass against central finite
differences.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ContractError, InputError, NumericError, ShapeError, SpecError

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid", "softmax")
OPTIMIZERS = ("sgd", "adam")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MAX_GRADCHECK_PARAMS = 10_000


@dataclass(frozen=True)
class LayerSpec:
    """One fully connected layer: ``activation(x @ W.T + b)`` then dropout."""

    input_dim: int
    output_dim: int
    activation: str = "identity"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if int(self.input_dim) < 1 or int(self.output_dim) < 1:
            raise SpecError(
                f"layer dims must be >= 1, got {self.input_dim}->{self.output_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise SpecError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )
        if not 0.0 <= float(self.dropout_rate) < 1.0:
            raise SpecError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.activation == "softmax" and self.dropout_rate > 0:
            raise SpecError("dropout on a softmax output layer is not allowed")

    @property
    def n_params(self) -> int:
        return self.output_dim * self.input_dim + self.output_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        unknown = set(d) - {"input_dim", "output_dim", "activation", "dropout_rate"}
        if unknown:
            raise SpecError(f"unknown layer keys: {sorted(unknown)}")
        return cls(
            int(d["input_dim"]),
            int(d["output_dim"]),
            d.get("activation", "identity"),
            float(d.get("dropout_rate", 0.0)),
        )


def validate_stack(specs: Sequence[LayerSpec]) -> None:
    """Check that a list of layer specs forms a valid network."""
    if len(specs) == 0:
        raise SpecError("a network needs at least one layer")
    for i, (a, b) in enumerate(zip(specs[:-1], specs[1:])):
        if a.output_dim != b.input_dim:
            raise SpecError(
                f"layer {i} output_dim {a.output_dim} != layer {i + 1} input_dim {b.input_dim}"
            )
    for i, s in enumerate(specs[:-1]):
        if s.activation == "softmax":
            raise SpecError(f"softmax is only allowed on the final layer (layer {i})")


def stack_params(specs: Iterable[LayerSpec]) -> int:
    """Closed-form parameter count, sum of ``out*in + out``."""
    return sum(s.n_params for s in specs)


def stack_macs(specs: Iterable[LayerSpec], n_samples: int = 1) -> int:
    """Closed-form multiply-accumulate count of one forward pass."""
    return n_samples * sum(s.input_dim * s.output_dim for s in specs)


def init_layer(spec: LayerSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # He-uniform for relu, Xavier-uniform otherwise; zero bias
    if spec.activation == "relu":
        limit = math.sqrt(6.0 / spec.input_dim)
    else:
        limit = math.sqrt(6.0 / (spec.input_dim + spec.output_dim))
    weight = rng.uniform(-limit, limit, size=(spec.output_dim, spec.input_dim))
    return weight, np.zeros(spec.output_dim)


class Layer:
    __slots__ = ("weight", "bias", "spec")

    def __init__(self, weight: np.ndarray, bias: np.ndarray, spec: LayerSpec):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.shape != (spec.output_dim, spec.input_dim) or bias.shape != (spec.output_dim,):
            raise ShapeError(
                f"parameters {weight.shape}/{bias.shape} do not match spec "
                f"{spec.input_dim}->{spec.output_dim}"
            )
        self.weight = weight
        self.bias = bias
        self.spec = spec


class DenseNet:
    """An ordered stack of dense layers.

    ``mode`` is ``"train"`` (dropout active) or ``"infer"`` (dropout is the
    identity). Parameters are mutated in place by :func:`optimizer_step`; every
    mutation bumps ``version`` so that stale forward caches can be detected.
    """

    def __init__(self, layers: Sequence[Layer], mode: str = "train"):
        validate_stack([layer.spec for layer in layers])
        self.layers = list(layers)
        self.mode = mode
        self.version = 0

    @classmethod
    def from_specs(cls, specs: Sequence[LayerSpec], seed: int, layer_offset: int = 0) -> "DenseNet":
        """Initialise a network; layer ``j`` draws from ``default_rng([seed, layer_offset + j])``.

        The offset lets a sub-network reproduce exactly the parameters the same
        layers would get inside a longer stack.
        """
        validate_stack(specs)
        layers = []
        for j, spec in enumerate(specs):
            rng = np.random.default_rng([int(seed), layer_offset + j])
            layers.append(Layer(*init_layer(spec, rng), spec))
        return cls(layers)

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.output_dim

    @property
    def parameter_count(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    @property
    def mode(self) -> str:
        return self._mode

    @mode.setter
    def mode(self, value: str) -> None:
        if value not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {value!r}")
        self._mode = value

    def train(self) -> "DenseNet":
        self.mode = "train"
        return self

    def infer(self) -> "DenseNet":
        self.mode = "infer"
        return self

    @property
    def has_dropout(self) -> bool:
        return any(s.dropout_rate > 0 for s in self.specs)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "DenseNet":
        net = DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.spec) for l in self.layers], self.mode
        )
        return net

    def __repr__(self):
        dims = "->".join([str(self.input_dim)] + [f"{s.output_dim}:{s.activation}" for s in self.specs])
        return f"DenseNet({dims}, params={self.parameter_count}, mode={self.mode})"


def concat(nets: Sequence[DenseNet]) -> DenseNet:
    """Stack networks end to end into one (parameters are copied)."""
    layers = [Layer(l.weight.copy(), l.bias.copy(), l.spec) for n in nets for l in n.layers]
    return DenseNet(layers, nets[0].mode)


# ---------------------------------------------------------------------------
# FLOP instrumentation


class FlopCounter:
    """Context manager counting multiply-accumulates of every dense forward inside it."""

    _active: list["FlopCounter"] = []

    def __init__(self):
        self.macs = 0
        self.forward_calls = 0

    def __enter__(self):
        FlopCounter._active.append(self)
        return self

    def __exit__(self, *exc):
        FlopCounter._active.remove(self)
        return False


def _count(macs: int) -> None:
    for counter in FlopCounter._active:
        counter.macs += macs


# ---------------------------------------------------------------------------
# activations


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        # split to avoid overflow in exp for large |z|
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return softmax(z)


def _activation_backward(kind: str, z: np.ndarray, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return grad
    if kind == "relu":
        return grad * (z > 0)
    if kind == "tanh":
        return grad * (1.0 - a * a)
    if kind == "sigmoid":
        return grad * a * (1.0 - a)
    # softmax Jacobian-vector product
    return a * (grad - np.sum(grad * a, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    output: np.ndarray | None = None

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


@dataclass
class Gradients:
    """Per-layer parameter gradients plus the gradient w.r.t. the network input."""

    weights: list
    biases: list
    input: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            [w * factor for w in self.weights],
            [b * factor for b in self.biases],
            None if self.input is None else self.input * factor,
        )

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


def _as_batch(batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {batch.shape}")
    return batch


def dense_forward(net: DenseNet, batch, rng=None) -> tuple[np.ndarray, ForwardCache]:
    """Run ``batch`` (N x D) through ``net``.

    In train mode ``rng`` (seed or Generator) draws the inverted-dropout masks;
    in infer mode dropout is skipped entirely and ``rng`` is unused.
    """
    x = _as_batch(batch)
    train = net.mode == "train"
    if train and net.has_dropout:
        rng = np.random.default_rng(rng)
    cache = ForwardCache(id(net), net.version)
    for i, layer in enumerate(net.layers):
        spec = layer.spec
        if x.shape[1] != spec.input_dim:
            raise ShapeError(
                f"layer {i}: expected input dim {spec.input_dim}, got {x.shape[1]}"
            )
        _count(x.shape[0] * spec.input_dim * spec.output_dim)
        z = x @ layer.weight.T + layer.bias
        a = _activate(spec.activation, z)
        mask = None
        if train and spec.dropout_rate > 0:
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            out = a * mask
        else:
            out = a
        cache.inputs.append(x)
        cache.pre.append(z)
        cache.post.append(a)
        cache.masks.append(mask)
        x = out
    for counter in FlopCounter._active:
        counter.forward_calls += 1
    cache.output = x
    return x, cache


def predict(net: DenseNet, batch) -> np.ndarray:
    """Deterministic forward pass (dropout off), without keeping a cache."""
    x = _as_batch(batch)
    for i, layer in enumerate(net.layers):
        spec = layer.spec
        if x.shape[1] != spec.input_dim:
            raise ShapeError(
                f"layer {i}: expected input dim {spec.input_dim}, got {x.shape[1]}"
            )
        _count(x.shape[0] * spec.input_dim * spec.output_dim)
        x = _activate(spec.activation, x @ layer.weight.T + layer.bias)
    return x


def dense_backward(net: DenseNet, cache: ForwardCache, upstream_grad, wrt: str = "output") -> Gradients:
    """Backpropagate ``upstream_grad`` through ``net``.

    ``wrt="output"`` means the gradient is w.r.t. the network output;
    ``wrt="logits"`` means it is already w.r.t. the final pre-activation (the
    fused softmax/cross-entropy path), so the last activation is skipped.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractError("forward cache does not belong to the current state of this network")
    if wrt not in ("output", "logits"):
        raise ValueError(f"wrt must be 'output' or 'logits', got {wrt!r}")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {cache.output.shape}")
    n = len(net.layers)
    dws, dbs = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        layer = net.layers[i]
        if not (wrt == "logits" and i == n - 1):
            if cache.masks[i] is not None:
                g = g * cache.masks[i]
            g = _activation_backward(layer.spec.activation, cache.pre[i], cache.post[i], g)
        dws[i] = g.T @ cache.inputs[i]
        dbs[i] = g.sum(axis=0)
        g = g @ layer.weight
    return Gradients(dws, dbs, g)


# ---------------------------------------------------------------------------
# losses


def loss_softmax_xent(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k - 1}]")
    labels = labels.astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(n), labels] - log_z
    loss = float(-log_p.mean())
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def loss_mse(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries, and its gradient ``2(pred - target)/n``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


def task_loss(net: DenseNet, cache: ForwardCache, targets, task: str) -> tuple[float, np.ndarray, str]:
    """Loss for ``task`` plus the gradient and what it is taken w.r.t."""
    if task == "classification":
        if net.layers[-1].spec.activation == "softmax":
            loss, grad = loss_softmax_xent(cache.logits, targets)
            return loss, grad, "logits"
        loss, grad = loss_softmax_xent(cache.output, targets)
        return loss, grad, "output"
    if task == "regression":
        targets = np.asarray(targets, dtype=np.float64).reshape(cache.output.shape)
        loss, grad = loss_mse(cache.output, targets)
        return loss, grad, "output"
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise SpecError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if not self.learning_rate > 0:
            raise SpecError(f"learning_rate must be > 0, got {self.learning_rate}")

    @classmethod
    def for_net(cls, net: DenseNet, kind: str = "adam", learning_rate: float = 1e-3) -> "OptimizerState":
        state = cls(kind, float(learning_rate))
        if kind == "adam":
            state.first_moment = [np.zeros_like(p) for p in net.parameters()]
            state.second_moment = [np.zeros_like(p) for p in net.parameters()]
        return state


def optimizer_step(net: DenseNet, grads: Gradients, state: OptimizerState) -> tuple[DenseNet, OptimizerState]:
    """Apply one in-place update to ``net``; returns ``(net, state)`` for chaining."""
    params = net.parameters()
    garrays = grads.arrays()
    if len(params) != len(garrays):
        raise ShapeError(f"got {len(garrays)} gradient arrays for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, garrays)):
        if p.shape != g.shape:
            raise ShapeError(f"gradient {i} shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite entries in gradient of parameter {i}")
    state.step += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, garrays):
            p -= lr * g
    else:
        if len(state.first_moment) != len(params):
            raise ContractError("optimizer state was created for a different network")
        c1 = 1.0 - ADAM_BETA1**state.step
        c2 = 1.0 - ADAM_BETA2**state.step
        for p, g, m, v in zip(params, garrays, state.first_moment, state.second_moment):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    net.version += 1
    return net, state


# ---------------------------------------------------------------------------
# finite-difference verification


def _reference_loss(net: DenseNet, batch, masks, targets, task: str) -> np.longdouble:
    # independent extended-precision forward used only by the finite-difference oracle
    x = np.asarray(batch, dtype=np.longdouble)
    if x.ndim == 1:
        x = x[None, :]
    for layer, mask in zip(net.layers, masks):
        z = x @ layer.weight.T.astype(np.longdouble) + layer.bias.astype(np.longdouble)
        kind = layer.spec.activation
        if kind == "relu":
            z = np.where(z > 0, z, 0)
        elif kind == "tanh":
            z = np.tanh(z)
        elif kind == "sigmoid":
            z = 1 / (1 + np.exp(-z))
        elif kind == "softmax" and task != "classification":
            e = np.exp(z - z.max(axis=1, keepdims=True))
            z = e / e.sum(axis=1, keepdims=True)
        x = z if mask is None else z * mask
    if task == "classification":
        # x holds logits: the softmax layer's activation is folded into the loss
        n = x.shape[0]
        m = x.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(x - m).sum(axis=1)) + m[:, 0]
        idx = np.asarray(targets, dtype=np.intp)
        return np.mean(log_z - x[np.arange(n), idx])
    diff = x - np.asarray(targets, dtype=np.longdouble).reshape(x.shape)
    return np.mean(diff * diff)


def gradient_check(net: DenseNet, batch, labels, loss_kind: str, eps: float = 1e-6,
                   seed: int = 0, analytic: Gradients | None = None) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``loss_kind`` is ``"xent"`` or ``"mse"``. The numeric side re-evaluates the
    loss with a separate extended-precision forward pass that reuses the dropout
    masks of the analytic pass, so both sides see the same function.
    ``analytic`` overrides the backprop gradients (used to show that
    corrupted gradients are caught).
    """
    if net.parameter_count > MAX_GRADCHECK_PARAMS:
        raise SpecError(
            f"gradient_check supports at most {MAX_GRADCHECK_PARAMS} parameters, "
            f"net has {net.parameter_count}"
        )
    task = {"xent": "classification", "mse": "regression"}.get(loss_kind)
    if task is None:
        raise ValueError(f"loss_kind must be 'xent' or 'mse', got {loss_kind!r}")

    _, cache = dense_forward(net, batch, seed)
    masks = cache.masks
    if analytic is None:
        _, grad, wrt = task_loss(net, cache, labels, task)
        analytic = dense_backward(net, cache, grad, wrt=wrt)

    worst = 0.0
    for p, g in zip(net.parameters(), analytic.arrays()):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = _reference_loss(net, batch, masks, labels, task)
            flat[j] = orig - eps
            down = _reference_loss(net, batch, masks, labels, task)
            flat[j] = orig
            # the realised step differs from 2*eps by float64 rounding of orig +/- eps
            step = (np.longdouble(orig + eps) - np.longdouble(orig - eps))
            numeric = float((up - down) / step)
            a = gflat[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
