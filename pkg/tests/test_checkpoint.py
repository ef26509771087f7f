import struct

import numpy as np
import pytest

from dualrot import checkpoint, segmodel
from dualrot.trainer import TrainState


def _state(teacher=True):
    rng = np.random.default_rng(0)
    s = segmodel.init(0)
    mom = [rng.standard_normal(t.shape) for t in s.tensors]
    return TrainState(s, segmodel.init(1) if teacher else None, mom, iter=17, epoch=3)


@pytest.mark.parametrize("teacher", [True, False])
def test_round_trip_is_bitwise(teacher, tmp_path):
    st = _state(teacher)
    cfg = {"seed": 1, "eta": 0.996}
    checkpoint.save(tmp_path / "x.ckpt", st, cfg)
    back, manifest = checkpoint.load(tmp_path / "x.ckpt")
    assert back.iter == 17 and back.epoch == 3
    assert manifest["config_hash"] == checkpoint.config_hash(cfg)
    for a, b in zip(st.student.arrays() + st.momentum, back.student.arrays() + back.momentum):
        assert a.tobytes() == b.tobytes()
    if teacher:
        assert all(a.tobytes() == b.tobytes() for a, b in zip(st.teacher.arrays(), back.teacher.arrays()))
    else:
        assert back.teacher is None
    assert checkpoint.dumps(back, cfg) == checkpoint.dumps(st, cfg)


def test_header_layout():
    buf = checkpoint.dumps(_state())
    magic, version, mlen = struct.unpack_from("<4sIQ", buf)
    assert magic == b"CAMT" and version == 1
    n = segmodel.parameter_count()
    assert len(buf) == 16 + mlen + 3 * n * 8


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda b: b[:10], "shorter than the header"),
        (lambda b: b"XXXX" + b[4:], "bad magic"),
        (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
        (lambda b: b[:-8], "payload"),
        (lambda b: b[:16] + b"!" + b[17:], "manifest"),
    ],
)
def test_corruption_is_detected(mutate, msg):
    buf = checkpoint.dumps(_state())
    with pytest.raises(checkpoint.CheckpointError, match=msg):
        checkpoint.loads(mutate(buf))


def test_config_hash_is_order_independent():
    assert checkpoint.config_hash({"a": 1, "b": 2}) == checkpoint.config_hash({"b": 2, "a": 1})
    assert checkpoint.config_hash({"a": 1}) != checkpoint.config_hash({"a": 2})
