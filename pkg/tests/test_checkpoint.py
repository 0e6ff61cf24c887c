import numpy as np
import pytest

from bitsird.bitcore import pack_bits, unpack_bits
from bitsird.checkpoint import load_checkpoint, save_checkpoint
from bitsird.errors import ArchitectureMismatchError, FormatError
from bitsird.network import Model, NetConfig


def small_model(seed=0):
    return Model(NetConfig(stage_channels=(4, 8, 16), blocks=(1, 1, 1)), seed=seed)


def test_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(80)
    records = [
        ("a.w", rng.normal(size=(3, 2)).astype(np.float32)),
        ("b.k", np.asarray(0.125, dtype=np.float32)),
        ("c.bits", pack_bits(rng.choice([-1, 1], size=77))),
    ]
    p1 = tmp_path / "one.ckpt"
    p2 = tmp_path / "two.ckpt"
    save_checkpoint(p1, records)
    loaded = load_checkpoint(p1)
    save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_preserves_values(tmp_path):
    rng = np.random.default_rng(81)
    arr = rng.normal(size=(4, 5)).astype(np.float32)
    bits = rng.choice([-1, 1], size=130)
    path = tmp_path / "v.ckpt"
    save_checkpoint(path, [("x", arr), ("y", pack_bits(bits))])
    loaded = dict(load_checkpoint(path))
    assert np.array_equal(loaded["x"], arr)
    assert np.array_equal(unpack_bits(loaded["y"]), bits)
    assert loaded["y"].shape == (130,)


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError) as exc:
        load_checkpoint(path)
    assert exc.value.offset == 0


def test_rejects_unknown_dtype(tmp_path):
    path = tmp_path / "d.ckpt"
    save_checkpoint(path, [("x", np.zeros(2, dtype=np.float32))])
    data = bytearray(path.read_bytes())
    # dtype code sits after magic(4) + version(4) + count(4) + namelen(4) + name(1)
    data[17] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError) as exc:
        load_checkpoint(path)
    assert "dtype" in str(exc.value)


def test_truncated_payload_reports_offset(tmp_path):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, [("x", np.zeros(8, dtype=np.float32))])
    whole = path.read_bytes()
    path.write_bytes(whole[:-5])
    with pytest.raises(FormatError) as exc:
        load_checkpoint(path)
    assert exc.value.offset == len(whole) - 5


def test_model_state_round_trip(tmp_path):
    model = small_model(seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model.state_arrays())
    other = small_model(seed=9)
    before = {n: p.value.copy() for n, p in other.named_params()}
    other.load_state_arrays(load_checkpoint(path))
    x = np.random.default_rng(0).normal(size=(1, 32, 32)).astype(np.float32)
    assert np.array_equal(model.forward(x), other.forward(x))
    changed = any(
        not np.array_equal(before[n], p.value) for n, p in other.named_params()
    )
    assert changed


def test_mismatched_architecture_fails_before_assignment(tmp_path):
    model = small_model(seed=0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model.state_arrays())
    other = Model(NetConfig(stage_channels=(8, 16, 32), blocks=(1, 1, 1)), seed=0)
    before = {n: p.value.copy() for n, p in other.named_params()}
    with pytest.raises(ArchitectureMismatchError) as exc:
        other.load_state_arrays(load_checkpoint(path))
    assert exc.value.tensor_name
    for n, p in other.named_params():
        assert np.array_equal(before[n], p.value)
