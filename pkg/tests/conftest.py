import numpy as np
import pytest

from divnet.nn import DenseNet, LayerSpec

HIDDEN_ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


def random_net(rng, loss_kind, max_layers=3, max_width=16, dropout=True):
    """Random small net; biases randomised so relu units sit away from their kink."""
    n_layers = int(rng.integers(1, max_layers + 1))
    dims = [int(rng.integers(1, max_width + 1)) for _ in range(n_layers + 1)]
    specs = []
    for i in range(n_layers):
        last = i == n_layers - 1
        act = str(rng.choice(HIDDEN_ACTIVATIONS))
        out = dims[i + 1]
        if last and loss_kind == "xent":
            act, out = "softmax", max(out, 2)
        rate = float(rng.choice([0.0, 0.3])) if dropout and not last else 0.0
        specs.append(LayerSpec(dims[i], out, act, rate))
    net = DenseNet.from_specs(specs, int(rng.integers(2**31)))
    for layer in net.layers:
        layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
    return net


def random_batch(rng, net, loss_kind, max_n=8):
    n = int(rng.integers(1, max_n + 1))
    X = rng.normal(size=(n, net.input_dim))
    if loss_kind == "xent":
        y = rng.integers(0, net.output_dim, size=n)
    else:
        y = rng.normal(size=(n, net.output_dim))
    return X, y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
