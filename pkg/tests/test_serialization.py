import numpy as np
import pytest

from divnet.baselines import (
    BootstrapEnsemble,
    DeepEnsemble,
    McDropoutModel,
    baseline_arch,
    baseline_predict,
)
from divnet.den import DenSpec, den_init, den_predict
from divnet.exceptions import FormatError
from divnet.nn import DenseNet, predict
from divnet.serialization import MAGIC, load_model, read_header, save_model

SPEC = DenSpec.build(5, [7], [4], 3, "classification", 3, "relu", 0.2)


def models():
    arch = baseline_arch(SPEC)
    members = [DenseNet.from_specs(arch, i) for i in range(3)]
    return {
        "den": den_init(SPEC, 1).infer(),
        "ensemble": DeepEnsemble(members, "classification"),
        "bootstrap": BootstrapEnsemble([m.copy() for m in members], "classification", resample_seeds=[4, 5, 6]),
        "mc_dropout": McDropoutModel(DenseNet.from_specs(arch, 0), 4, "classification"),
        "net": DenseNet.from_specs(arch, 2),
    }


@pytest.mark.parametrize("kind", list(models()))
def test_roundtrip_exact(tmp_path, kind, rng):
    model = models()[kind]
    path = save_model(model, tmp_path / "m.model", config_hash="feed", meta={"method": kind})
    back = load_model(path)
    header = read_header(path)
    assert header["kind"] == kind and header["config_hash"] == "feed"
    assert back.parameter_count == model.parameter_count == header["parameter_count"]
    X = rng.normal(size=(6, 5))
    if kind == "den":
        assert np.array_equal(den_predict(back, X).values, den_predict(model, X).values)
        assert back.spec == model.spec
    elif kind == "net":
        assert np.array_equal(predict(back, X), predict(model, X))
    else:
        assert np.array_equal(baseline_predict(back, X, 3).values, baseline_predict(model, X, 3).values)
    if kind == "bootstrap":
        assert back.resample_seeds == [4, 5, 6]


def test_truncated(tmp_path):
    path = save_model(models()["den"], tmp_path / "m.model")
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="payload"):
        load_model(path)
    path.write_bytes(raw[:20])
    with pytest.raises(FormatError):
        load_model(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.model"
    path.write_bytes(b"NOTAMODEL" * 4)
    with pytest.raises(FormatError, match="not a divnet model"):
        read_header(path)


def test_layout(tmp_path):
    raw = save_model(models()["net"], tmp_path / "n.model").read_bytes()
    assert raw[:8] == MAGIC
