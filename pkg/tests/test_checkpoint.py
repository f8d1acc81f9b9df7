import struct
from collections import OrderedDict

import numpy as np
import pytest

from sgae.checkpoint import FORMAT_VERSION, MAGIC, Checkpoint, CheckpointError
from sgae.tensor import Tensor


def sample():
    r = np.random.default_rng(0)
    return Checkpoint(OrderedDict([("gcn.W_sym", r.normal(size=(3, 5))), ("decoder.b_p", r.normal(size=4)),
                                   ("dictionary.D", r.normal(size=(3, 2)))]),
                      config={"d": 3, "lr_main": 5e-4}, epoch=7, phase="sgae-dict",
                      rng_state={"seed": 1}, extra={"words": {"tokens": ["a"]}})


def test_roundtrip_bit_exact(tmp_path):
    ck = sample()
    ck.save(tmp_path / "a.ckpt")
    again = Checkpoint.load(tmp_path / "a.ckpt")
    assert again == ck
    assert again.to_bytes() == (tmp_path / "a.ckpt").read_bytes()
    for k in ck.tensors:
        assert again.tensors[k].tobytes() == ck.tensors[k].tobytes()
    assert (again.epoch, again.phase, again.config, again.extra) == (7, "sgae-dict", ck.config, ck.extra)


def test_layout():
    blob = sample().to_bytes()
    assert blob[:4] == MAGIC
    version, hlen = struct.unpack("<IQ", blob[4:16])
    assert version == FORMAT_VERSION
    payload = blob[16 + hlen:]
    assert len(payload) == 4 * (15 + 4 + 6)
    first = np.frombuffer(payload[:60], dtype="<f4").reshape(3, 5)
    np.testing.assert_array_equal(first, sample().tensors["gcn.W_sym"])


def test_float32_storage():
    ck = Checkpoint(OrderedDict(x=np.array([0.1], dtype=np.float64)))
    assert ck.tensors["x"].dtype == np.dtype("<f4")


def test_bad_magic_and_version():
    blob = sample().to_bytes()
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(blob[:4] + struct.pack("<I", 99) + blob[8:])


def test_restore_into():
    ck = sample()
    params = OrderedDict([("gcn.W_sym", Tensor(np.zeros((3, 5)))), ("decoder.b_p", Tensor(np.zeros(4)))])
    assert ck.restore_into(params) == ["gcn.W_sym", "decoder.b_p"]
    np.testing.assert_array_equal(params["decoder.b_p"].data, ck.tensors["decoder.b_p"].astype(np.float64))
    with pytest.raises(CheckpointError):
        ck.restore_into({"missing": Tensor(np.zeros(1))})
    assert ck.restore_into({"missing": Tensor(np.zeros(1))}, strict=False) == []
    with pytest.raises(CheckpointError):
        ck.restore_into({"decoder.b_p": Tensor(np.zeros(5))})
    moved = {"mem.D": Tensor(np.zeros((3, 2)))}
    assert ck.restore_into(moved, prefix_map={"mem.": "dictionary."}) == ["mem.D"]
