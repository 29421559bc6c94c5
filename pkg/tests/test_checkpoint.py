"""Binary container primitives and per-artifact checkpoint round-trips."""
import io
import struct

import numpy as np
import pytest

from gara import checkpoint as ck
from gara import container as ct
from gara.adapter import HIGHER, GaraAdapter, SingleSpaceAdapter
from gara.baselines import LoraAdapter, MoeLoraAdapter
from gara.errors import CheckpointError
from gara.rng import SeededRng
from gara.toy import HeadCalibration, ToyBackbone


# ---------------------------------------------------------------------------
# container primitives


def test_scalar_round_trips():
    buf = io.BytesIO()
    ct.write_u32(buf, 7)
    ct.write_u64(buf, 2**40 + 3)
    ct.write_f64(buf, -0.125)
    buf.seek(0)
    assert ct.read_u32(buf) == 7
    assert ct.read_u64(buf) == 2**40 + 3
    assert ct.read_f64(buf) == -0.125


def test_array_round_trip():
    arr = np.random.default_rng(0).normal(size=(3, 4))
    buf = io.BytesIO()
    ct.write_array(buf, arr)
    buf.seek(0)
    back = ct.read_array(buf)
    np.testing.assert_array_equal(back, arr.reshape(-1))
    # non-contiguous input flattens in its logical order
    buf = io.BytesIO()
    ct.write_array(buf, arr.T)
    buf.seek(0)
    np.testing.assert_array_equal(ct.read_array(buf), arr.T.reshape(-1))


def test_truncated_read():
    buf = io.BytesIO(b"\x01\x02")
    with pytest.raises(CheckpointError, match="truncated"):
        ct.read_u32(buf)


def test_magic_and_version_checks():
    buf = io.BytesIO(b"XXXX")
    with pytest.raises(CheckpointError, match="bad magic"):
        ct.expect_magic(buf, ct.MAGIC_LORA)
    buf = io.BytesIO(struct.pack("<I", 99))
    with pytest.raises(CheckpointError, match="version"):
        ct.read_version(buf)


def test_expect_eof():
    buf = io.BytesIO(b"x")
    with pytest.raises(CheckpointError, match="trailing"):
        ct.expect_eof(buf)
    ct.expect_eof(io.BytesIO(b""))


def test_peek_magic_short_file(tmp_path):
    path = tmp_path / "tiny"
    path.write_bytes(b"AB")
    with pytest.raises(CheckpointError, match="too short"):
        ct.peek_magic(path)


# ---------------------------------------------------------------------------
# adapter round-trips


def _randomized_gara() -> GaraAdapter:
    ad = GaraAdapter.build(6, 8, 2, 4, 0.7, SeededRng(1))
    fill = np.random.default_rng(2)
    for p in ad.parameters():
        p.value[...] = fill.normal(size=p.value.shape)
    return ad


def _assert_same_values(a, b):
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.value.tobytes() == pb.value.tobytes(), pa.name


def _double_save(tmp_path, save, load, obj):
    first = tmp_path / "first.ckpt"
    second = tmp_path / "second.ckpt"
    save(first, obj)
    loaded = load(first)
    save(second, loaded)
    assert first.read_bytes() == second.read_bytes()
    return loaded


def test_gara_round_trip(tmp_path):
    ad = _randomized_gara()
    back = _double_save(tmp_path, ck.save_gara, ck.load_gara, ad)
    assert (back.out_dim, back.in_dim) == (6, 8)
    assert back.lower.max_rank == 2
    assert back.higher.max_rank == 4
    assert back.tau == 0.7
    _assert_same_values(ad, back)


def test_single_round_trip(tmp_path):
    ad = SingleSpaceAdapter.build(6, 8, 3, 0.4, SeededRng(3), label=HIGHER)
    ad.space.up.value[...] = np.random.default_rng(4).normal(size=(6, 3))
    back = _double_save(tmp_path, ck.save_single, ck.load_single, ad)
    assert back.label == HIGHER
    assert back.tau == 0.4
    _assert_same_values(ad, back)


def test_lora_round_trip(tmp_path):
    ad = LoraAdapter.build(5, 7, 2, SeededRng(5))
    ad.up.value[...] = np.random.default_rng(6).normal(size=(5, 2))
    back = _double_save(tmp_path, ck.save_lora, ck.load_lora, ad)
    assert back.rank == 2
    _assert_same_values(ad, back)


def test_moe_round_trip(tmp_path):
    ad = MoeLoraAdapter.build(5, 8, [1, 2, 4], 0.9, SeededRng(7))
    fill = np.random.default_rng(8)
    for p in ad.parameters():
        p.value[...] = fill.normal(size=p.value.shape)
    back = _double_save(tmp_path, ck.save_moe, ck.load_moe, ad)
    assert back.ranks == [1, 2, 4]
    assert back.tau == 0.9
    _assert_same_values(ad, back)


def test_backbone_round_trip(tmp_path):
    bb = ToyBackbone(16, 4, 8, 2, SeededRng(9))
    back = _double_save(tmp_path, ck.save_backbone, ck.load_backbone, bb)
    assert (back.image_size, back.patch_size, back.ff_hidden, back.n_blocks) == (16, 4, 8, 2)
    assert back.frozen is True  # loads frozen by default
    _assert_same_values(bb, back)
    thawed = ck.load_backbone(tmp_path / "first.ckpt", frozen=False)
    assert thawed.frozen is False


def test_calibration_round_trip(tmp_path):
    cal = HeadCalibration.build()
    cal.gain.value[...] = 2.5
    cal.bias.value[...] = -0.25
    back = _double_save(tmp_path, ck.save_calibration, ck.load_calibration, cal)
    assert float(back.gain.value) == 2.5
    assert float(back.bias.value) == -0.25


# ---------------------------------------------------------------------------
# failure modes and dispatch


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError, match="missing"):
        ck.load_gara(tmp_path / "nope.ckpt")
    with pytest.raises(CheckpointError, match="missing"):
        ck.load_adapter(tmp_path / "nope.ckpt")


def test_wrong_magic_between_kinds(tmp_path):
    path = tmp_path / "lora.ckpt"
    ck.save_lora(path, LoraAdapter.build(4, 6, 2, SeededRng(10)))
    with pytest.raises(CheckpointError, match="bad magic"):
        ck.load_gara(path)


def test_truncated_checkpoint(tmp_path):
    path = tmp_path / "g.ckpt"
    ck.save_gara(path, _randomized_gara())
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        ck.load_gara(path)


def test_trailing_garbage(tmp_path):
    path = tmp_path / "g.ckpt"
    ck.save_gara(path, _randomized_gara())
    path.write_bytes(path.read_bytes() + b"!")
    with pytest.raises(CheckpointError, match="trailing"):
        ck.load_gara(path)


def test_header_payload_mismatch(tmp_path):
    path = tmp_path / "l.ckpt"
    ck.save_lora(path, LoraAdapter.build(4, 6, 2, SeededRng(11)))
    blob = bytearray(path.read_bytes())
    # bump the declared rank: magic(4) + version(4) + out(4) + in(4) -> rank
    blob[16:20] = struct.pack("<I", 3)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="expected"):
        ck.load_lora(path)


def test_load_adapter_dispatch(tmp_path):
    objs = {
        "gara": _randomized_gara(),
        "single": SingleSpaceAdapter.build(6, 8, 3, 0.5, SeededRng(12)),
        "lora": LoraAdapter.build(6, 8, 3, SeededRng(13)),
        "moe": MoeLoraAdapter.build(6, 8, [1, 2], 0.5, SeededRng(14)),
    }
    types = {
        "gara": GaraAdapter,
        "single": SingleSpaceAdapter,
        "lora": LoraAdapter,
        "moe": MoeLoraAdapter,
    }
    for tag, obj in objs.items():
        path = tmp_path / f"{tag}.ckpt"
        ck.save_adapter(path, obj)
        back = ck.load_adapter(path)
        assert isinstance(back, types[tag])
        _assert_same_values(obj, back)


def test_load_adapter_rejects_other_kinds(tmp_path):
    path = tmp_path / "bb.ckpt"
    ck.save_backbone(path, ToyBackbone(16, 4, 8, 1, SeededRng(15)))
    with pytest.raises(CheckpointError, match="not an adapter"):
        ck.load_adapter(path)


def test_save_adapter_rejects_unknown_type(tmp_path):
    with pytest.raises(CheckpointError, match="cannot checkpoint"):
        ck.save_adapter(tmp_path / "x.ckpt", object())
