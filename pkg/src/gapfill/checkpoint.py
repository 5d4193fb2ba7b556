"""``GPM1`` model checkpoints: text header plus little-endian float64 parameters.

Layout::

    GPM1
    kind=<variational|direct-net>
    config=<compact JSON, sorted keys>
    params=<name>:<d0>x<d1>...;<name>:...
    dtype=f64le
    <empty line>
    <parameters concatenated in header order, C order>
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .direct import DirectNet, DirectNetConfig
from .errors import BadMagic, GfdShapeMismatch, MalformedHeader
from .variational import VariationalModel, build_model

GPM_MAGIC = "GPM1"


def model_config(model) -> dict:
    return model.config()


def save_model(model, path) -> None:
    state = model.state_dict()
    shapes = ";".join(f"{name}:{'x'.join(str(d) for d in t.shape) or 'scalar'}" for name, t in state.items())
    header = "\n".join([
        GPM_MAGIC,
        f"kind={model.family}",
        "config=" + json.dumps(model_config(model), sort_keys=True, separators=(",", ":")),
        f"params={shapes}",
        "dtype=f64le",
        "",
        "",
    ])
    payload = b"".join(t.detach().numpy().astype("<f8").tobytes(order="C") for t in state.values())
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(payload)


def _parse_shape(s: str) -> tuple[int, ...]:
    return () if s == "scalar" else tuple(int(d) for d in s.split("x"))


def load_model(path):
    """Rebuild a model (``VariationalModel`` or ``DirectNet``) from a checkpoint."""
    data = Path(path).read_bytes()
    first, _, rest = data.partition(b"\n")
    if first.strip() != GPM_MAGIC.encode():
        raise BadMagic(f"{path}: expected magic {GPM_MAGIC!r}, got {first[:16]!r}")
    head, sep, payload = rest.partition(b"\n\n")
    if not sep:
        raise MalformedHeader(f"{path}: header is not terminated by an empty line")
    try:
        kv = dict(line.split("=", 1) for line in head.decode("utf-8").splitlines())
        kind, config = kv["kind"], json.loads(kv["config"])
        specs = [item.split(":") for item in kv["params"].split(";")] if kv["params"] else []
        shapes = [(name, _parse_shape(shape)) for name, shape in specs]
    except (ValueError, KeyError) as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc
    if kv.get("dtype") != "f64le":
        raise MalformedHeader(f"{path}: unsupported dtype {kv.get('dtype')!r}")
    if kind == "variational":
        model = build_model(dict(config["prior"]), dict(config["solver"]))
    elif kind == "direct-net":
        model = DirectNet(DirectNetConfig.from_dict(config))
    else:
        raise MalformedHeader(f"{path}: unknown model kind {kind!r}")
    n = sum(int(np.prod(s)) for _, s in shapes)
    if len(payload) != 8 * n:
        raise GfdShapeMismatch(f"{path}: payload has {len(payload)} bytes, expected {8 * n}")
    flat = np.frombuffer(payload, dtype="<f8")
    state, offset = {}, 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        state[name] = torch.from_numpy(flat[offset:offset + size].astype(np.float64).reshape(shape))
        offset += size
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise MalformedHeader(f"{path}: parameters do not match the config: {exc}") from exc
    return model


__all__ = ["save_model", "load_model", "VariationalModel", "DirectNet"]
