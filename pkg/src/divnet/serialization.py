"""Model container: magic word, JSON header, raw little-endian float64 payload.

Layout::

    8 bytes   b"DIVNETM\\x01"
    8 bytes   header length, little-endian uint64
    N bytes   UTF-8 JSON header (format tag, kind, architecture, array shapes)
    ...       every parameter array, float64 little-endian, in header order

Floats are stored bit-for-bit so a save/load round trip is exact.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .baselines import BootstrapEnsemble, DeepEnsemble, McDropoutModel
from .den import DenModel, DenSpec
from .exceptions import FormatError
from .nn import DenseNet, Layer, LayerSpec

MAGIC = b"DIVNETM\x01"
FORMAT_TAG = "divnet-model/1"
KINDS = ("den", "ensemble", "bootstrap", "mc_dropout", "net")


def _net_arrays(net: DenseNet, prefix: str) -> list:
    out = []
    for i, layer in enumerate(net.layers):
        out.append((f"{prefix}.{i}.weight", layer.weight))
        out.append((f"{prefix}.{i}.bias", layer.bias))
    return out


def _kind(model) -> str:
    if isinstance(model, DenModel):
        return "den"
    if isinstance(model, BootstrapEnsemble):
        return "bootstrap"
    if isinstance(model, DeepEnsemble):
        return "ensemble"
    if isinstance(model, McDropoutModel):
        return "mc_dropout"
    if isinstance(model, DenseNet):
        return "net"
    raise TypeError(f"cannot serialise {type(model).__name__}")


def save_model(model, path, config_hash: str | None = None, meta: dict | None = None) -> Path:
    kind = _kind(model)
    header = {"format": FORMAT_TAG, "kind": kind, "config_hash": config_hash, "meta": meta or {}}
    if kind == "den":
        header["spec"] = model.spec.to_dict()
        arrays = _net_arrays(model.trunk, "trunk")
        for b, branch in enumerate(model.branches):
            arrays += _net_arrays(branch, f"branch{b}")
    elif kind in ("ensemble", "bootstrap"):
        header["arch"] = [s.to_dict() for s in model.arch]
        header["task"] = model.task
        header["members"] = len(model.members)
        if kind == "bootstrap":
            header["resample_seeds"] = [int(s) for s in model.resample_seeds]
        arrays = []
        for i, m in enumerate(model.members):
            arrays += _net_arrays(m, f"member{i}")
    elif kind == "mc_dropout":
        header["arch"] = [s.to_dict() for s in model.arch]
        header["task"] = model.task
        header["passes"] = int(model.passes)
        arrays = _net_arrays(model.net, "net")
    else:
        header["arch"] = [s.to_dict() for s in model.specs]
        arrays = _net_arrays(model, "net")
    header["parameter_count"] = int(model.parameter_count)
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def _read(path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a divnet model container")
    (n,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + n:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format") != FORMAT_TAG or header.get("kind") not in KINDS:
        raise FormatError(f"{path}: unsupported format {header.get('format')!r} / kind {header.get('kind')!r}")
    payload = raw[16 + n:]
    expected = 8 * sum(int(np.prod(a["shape"], dtype=np.int64)) for a in header["arrays"])
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header describes {expected}")
    return header, payload


def read_header(path) -> dict:
    return _read(path)[0]


def load_model(path):
    """Rebuild the object saved by :func:`save_model` (mode ``infer``)."""
    header, payload = _read(path)
    arrays, offset = {}, 0
    for a in header["arrays"]:
        count = int(np.prod(a["shape"], dtype=np.int64))
        arrays[a["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(a["shape"]).astype(np.float64)
        offset += 8 * count

    def net(prefix, specs):
        try:
            layers = [Layer(arrays[f"{prefix}.{i}.weight"], arrays[f"{prefix}.{i}.bias"], s)
                      for i, s in enumerate(specs)]
        except KeyError as exc:
            raise FormatError(f"{path}: missing array {exc}") from exc
        return DenseNet(layers, mode="infer")

    kind = header["kind"]
    if kind == "den":
        spec = DenSpec.from_dict(header["spec"])
        return DenModel(spec, net("trunk", spec.trunk),
                        [net(f"branch{b}", spec.branch) for b in range(spec.branch_count)])
    arch = [LayerSpec.from_dict(s) for s in header["arch"]]
    if kind == "net":
        return net("net", arch)
    if kind == "mc_dropout":
        return McDropoutModel(net("net", arch), header["passes"], header["task"])
    members = [net(f"member{i}", arch) for i in range(header["members"])]
    if kind == "bootstrap":
        return BootstrapEnsemble(members, header["task"], resample_seeds=header["resample_seeds"])
    return DeepEnsemble(members, header["task"])
