import hashlib

import numpy as np
import pytest
import torch

from gapfill import DirectNet, DirectNetConfig, build_model
from gapfill.checkpoint import load_model, save_model
from gapfill.errors import BadMagic, FormatError, MalformedHeader, ShapeMismatch

MODELS = {
    "convnet": lambda: build_model({"kind": "convnet", "channels": 3, "kt": 1}, {"K": 4, "hidden": 2}, seed=5),
    "diffusion": lambda: build_model({"kind": "diffusion", "nu": 0.1}, {"K": 3, "update": "momentum"}),
    "direct": lambda: DirectNet(DirectNetConfig(hidden_dim=4, window=3, seed=2)),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_round_trip_is_byte_identical(tmp_path, name):
    model = MODELS[name]()
    save_model(model, tmp_path / "a.gpm")
    again = load_model(tmp_path / "a.gpm")
    save_model(again, tmp_path / "b.gpm")
    assert (tmp_path / "a.gpm").read_bytes() == (tmp_path / "b.gpm").read_bytes()
    assert type(again) is type(model)
    for (n, a), (_, b) in zip(model.state_dict().items(), again.state_dict().items()):
        assert torch.equal(a, b), n


def test_header_layout(tmp_path):
    save_model(MODELS["direct"](), tmp_path / "m.gpm")
    head = (tmp_path / "m.gpm").read_bytes().split(b"\n\n", 1)[0].decode().splitlines()
    assert head[0] == "GPM1" and head[1] == "kind=direct-net" and head[-1] == "dtype=f64le"
    assert head[3].startswith("params=enc1.weight:4x6x3x3;")


def test_loaded_model_reconstructs_identically(tmp_path):
    model = MODELS["convnet"]()
    save_model(model, tmp_path / "m.gpm")
    rng = np.random.default_rng(0)
    y, om, oc = rng.normal(size=(3, 8, 8)), rng.random((3, 8, 8)) < 0.6, np.ones((8, 8), bool)
    assert load_model(tmp_path / "m.gpm").reconstruct(y, om, oc).tobytes() == model.reconstruct(y, om, oc).tobytes()


def test_corrupt_files(tmp_path):
    save_model(MODELS["diffusion"](), tmp_path / "m.gpm")
    data = (tmp_path / "m.gpm").read_bytes()
    cases = {
        "magic": (b"GPM9" + data[4:], BadMagic),
        "short": (data[:-8], ShapeMismatch),
        "kind": (data.replace(b"kind=variational", b"kind=unet"), MalformedHeader),
        "noend": (data.split(b"\n\n")[0], MalformedHeader),
    }
    for name, (blob, err) in cases.items():
        (tmp_path / f"{name}.gpm").write_bytes(blob)
        with pytest.raises(err) as info:
            load_model(tmp_path / f"{name}.gpm")
        assert isinstance(info.value, FormatError) and info.value.exit_code == 4


def test_hash_is_stable_across_saves(tmp_path):
    model = MODELS["convnet"]()
    digests = set()
    for i in range(2):
        save_model(model, tmp_path / f"{i}.gpm")
        digests.add(hashlib.sha256((tmp_path / f"{i}.gpm").read_bytes()).hexdigest())
    assert len(digests) == 1
