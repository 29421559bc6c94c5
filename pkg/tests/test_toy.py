"""Patch tokenizer, toy backbone, adapter slots, pretraining."""
import numpy as np
import pytest

import gara.autograd as ag
from gara.adapter import GaraAdapter, delta_tokens
from gara.baselines import LoraAdapter
from gara.errors import ConfigError, ShapeError, TrainingDiagnosticError, UsageError
from gara.rng import SeededRng
from gara.toy import (
    AdapterSlot,
    HeadCalibration,
    SegmentationModel,
    ToyBackbone,
    forward_segment,
    forward_tokens,
    patchify,
    pretrain_backbone,
    unpatchify,
)


# ---------------------------------------------------------------------------
# patch tokenizer


def test_patchify_hand_fixture():
    image = np.arange(1.0, 17.0).reshape(4, 4)
    tokens = patchify(image, 2)
    # row-major patches, row-major pixels inside each patch
    want = np.array(
        [[1, 2, 5, 6], [3, 4, 7, 8], [9, 10, 13, 14], [11, 12, 15, 16]], dtype=np.float64
    )
    np.testing.assert_array_equal(tokens, want)


def test_patchify_unpatchify_inverse():
    image = np.random.default_rng(0).uniform(size=(32, 32))
    tokens = patchify(image, 8)
    assert tokens.shape == (16, 64)
    np.testing.assert_array_equal(unpatchify(tokens, 32, 8), image)
    # and the other direction
    tokens2 = np.random.default_rng(1).normal(size=(16, 64))
    np.testing.assert_array_equal(patchify(unpatchify(tokens2, 32, 8), 8), tokens2)


def test_patchify_validation():
    with pytest.raises(ShapeError):
        patchify(np.zeros((4, 6)), 2)
    with pytest.raises(ShapeError):
        patchify(np.zeros(16), 2)
    with pytest.raises(ShapeError):
        patchify(np.zeros((6, 6)), 4)
    with pytest.raises(ShapeError):
        unpatchify(np.zeros((4, 9)), 4, 2)


# ---------------------------------------------------------------------------
# backbone


def _small_backbone(seed: int = 0) -> ToyBackbone:
    return ToyBackbone(8, 4, 8, 1, SeededRng(seed))


def test_backbone_validation():
    with pytest.raises(ConfigError):
        ToyBackbone(30, 8, 8, 1, SeededRng(0))
    with pytest.raises(ConfigError):
        ToyBackbone(32, 8, 8, 0, SeededRng(0))
    with pytest.raises(ConfigError):
        ToyBackbone(32, 8, 0, 1, SeededRng(0))


def test_backbone_dims_and_parameters():
    bb = ToyBackbone(32, 8, 64, 2, SeededRng(1))
    assert bb.dim == 64
    assert bb.token_count == 16
    assert bb.n_blocks == 2
    params = bb.parameters()
    assert len(params) == 2 * 7 + 2
    names = [p.name for p in params]
    assert len(names) == len(set(names))
    assert bb.frozen is False


def test_forward_eval_is_plain_and_deterministic():
    bb = _small_backbone()
    image = np.random.default_rng(2).uniform(size=(8, 8))
    logits, decisions = forward_segment(bb, [], image)
    assert isinstance(logits, np.ndarray)  # no tape without train=True
    assert logits.shape == (4, 16)
    assert decisions == []
    logits2, _ = forward_segment(bb, [], image)
    np.testing.assert_array_equal(logits, logits2)


def test_forward_image_shape_error():
    bb = _small_backbone()
    with pytest.raises(ShapeError):
        forward_segment(bb, [], np.zeros((8, 10)))


def test_duplicate_slot_rejected():
    bb = _small_backbone()
    lora = LoraAdapter.build(16, 16, 2, SeededRng(3))
    slots = [AdapterSlot(0, "q", lora), AdapterSlot(0, "q", lora)]
    with pytest.raises(UsageError):
        forward_segment(bb, slots, np.zeros((8, 8)))


def test_unsupported_adapter_rejected():
    bb = _small_backbone()
    with pytest.raises(UsageError):
        forward_segment(bb, [AdapterSlot(0, "q", object())], np.zeros((8, 8)))


def _fresh_slots(bb: ToyBackbone, kind: str, seed: int = 4) -> list[AdapterSlot]:
    rng = SeededRng(seed)
    slots = []
    for li in range(bb.n_blocks):
        for tag in ("q", "k", "v"):
            if kind == "gara":
                adapter = GaraAdapter.build(bb.dim, bb.dim, 2, 4, 0.5, rng.split(li, tag))
            else:
                adapter = LoraAdapter.build(bb.dim, bb.dim, 2, rng.split(li, tag))
            slots.append(AdapterSlot(li, tag, adapter))
    return slots


def test_zero_init_adapters_preserve_outputs_exactly():
    # fresh adapters have zero up factors: the adapted model must reproduce
    # the bare backbone bit for bit, whatever the gates decide
    bb = _small_backbone()
    images = [np.random.default_rng(10 + i).uniform(size=(8, 8)) for i in range(5)]
    for kind in ("gara", "lora"):
        slots = _fresh_slots(bb, kind)
        for image in images:
            bare, _ = forward_segment(bb, [], image)
            adapted, _ = forward_segment(bb, slots, image)
            np.testing.assert_array_equal(adapted, bare)


def test_gated_slots_report_decisions():
    bb = _small_backbone()
    slots = _fresh_slots(bb, "gara")
    image = np.random.default_rng(20).uniform(size=(8, 8))
    _, decisions = forward_segment(bb, slots, image)
    assert [(d.layer, d.tag) for d in decisions] == [(li, t) for li in range(1) for t in ("q", "k", "v")]
    for d in decisions:
        assert isinstance(d.decision.use_higher, bool)
        assert 0.0 <= d.decision.space_soft <= 1.0
    # plain low-rank slots carry no telemetry
    _, silent = forward_segment(bb, _fresh_slots(bb, "lora"), image)
    assert silent == []


def test_frozen_backbone_gets_no_gradient():
    bb = _small_backbone()
    bb.frozen = True
    slots = _fresh_slots(bb, "lora")
    image = np.random.default_rng(21).uniform(size=(8, 8))
    logits, _ = forward_segment(bb, slots, image, train=True)
    target = np.zeros((4, 16))
    grads = ag.backward(ag.bce_loss(logits, target))
    backbone_params = set(map(id, bb.parameters()))
    assert all(id(p) not in backbone_params for p in grads)
    # the adapters do train: every down factor sees gradient
    for slot in slots:
        assert slot.adapter.down in grads


def test_unfrozen_backbone_trains():
    bb = _small_backbone()
    assert bb.frozen is False
    image = np.random.default_rng(22).uniform(size=(8, 8))
    logits, _ = forward_segment(bb, [], image, train=True)
    grads = ag.backward(ag.bce_loss(logits, np.zeros((4, 16))))
    assert bb.head_w in grads
    assert bb.blocks[0].wq in grads


def test_head_calibration_identity_at_init():
    bb = _small_backbone()
    cal = HeadCalibration.build()
    assert float(cal.gain.value) == 1.0
    assert float(cal.bias.value) == 0.0
    image = np.random.default_rng(23).uniform(size=(8, 8))
    bare, _ = forward_segment(bb, [], image)
    with_cal, _ = forward_segment(bb, [], image, calibration=cal)
    np.testing.assert_array_equal(with_cal, bare)
    cal.gain.value[...] = 2.0
    cal.bias.value[...] = -1.0
    scaled, _ = forward_segment(bb, [], image, calibration=cal)
    np.testing.assert_allclose(scaled, 2.0 * bare - 1.0, atol=1e-15)


def test_forward_tokens_matches_forward_segment():
    bb = _small_backbone()
    image = np.random.default_rng(24).uniform(size=(8, 8))
    via_image, _ = forward_segment(bb, [], image)
    via_tokens, _ = forward_tokens(bb, [], patchify(image, 4))
    np.testing.assert_array_equal(via_image, via_tokens)


def test_train_forward_uses_slot_rng_deterministically():
    bb = _small_backbone()
    bb.frozen = True
    slots = _fresh_slots(bb, "gara")
    for slot in slots:  # give the deltas something to differ by
        slot.adapter.lower.up.value[...] = np.random.default_rng(25).normal(
            size=slot.adapter.lower.up.value.shape
        )
    image = np.random.default_rng(26).uniform(size=(8, 8))
    a, _ = forward_segment(bb, slots, image, rng=SeededRng(5), train=True)
    b, _ = forward_segment(bb, slots, image, rng=SeededRng(5), train=True)
    np.testing.assert_array_equal(a.value, b.value)


# ---------------------------------------------------------------------------
# model wrapper


def test_segmentation_model_predict_mask():
    bb = _small_backbone()
    model = SegmentationModel(bb)
    image = np.random.default_rng(27).uniform(size=(8, 8))
    mask = model.predict_mask(image)
    assert mask.shape == (8, 8)
    assert mask.dtype == bool
    logits = model.predict_logits(image)
    np.testing.assert_array_equal(mask, unpatchify(logits, 8, 4) > 0.0)


def test_trainable_parameters_respect_freezing():
    bb = _small_backbone()
    slots = _fresh_slots(bb, "lora")[:2]
    cal = HeadCalibration.build()
    model = SegmentationModel(bb, slots, cal)
    assert len(model.trainable_parameters()) == len(bb.parameters()) + 2 * 2 + 2
    bb.frozen = True
    trainable = model.trainable_parameters()
    assert len(trainable) == 2 * 2 + 2
    assert cal.gain in trainable


# ---------------------------------------------------------------------------
# pretraining


# the clean-image synthesizer targets the 32x32 frame, so pretraining tests
# run at full image size with a handful of steps


def _clean_pairs(n: int, seed: int = 0):
    from gara.bench import generate_clean_pairs

    return generate_clean_pairs(n, SeededRng(seed))


def test_pretrain_steps_zero_warns_and_freezes():
    pairs = _clean_pairs(4)
    with pytest.warns(UserWarning, match="untrained"):
        backbone, report = pretrain_backbone(pairs, pairs, 0, SeededRng(30))
    assert backbone.frozen is True
    assert report["steps"] == 0
    assert report["loss_history"] == []
    assert 0.0 <= report["clean_iou"] <= 1.0


def test_pretrain_small_run():
    pairs = _clean_pairs(4, seed=1)
    backbone, report = pretrain_backbone(pairs, pairs, 3, SeededRng(31), iou_threshold=0.0)
    assert backbone.frozen is True
    assert len(report["loss_history"]) == 3
    assert all(np.isfinite(v) for v in report["loss_history"])


def test_pretrain_quality_bar():
    pairs = _clean_pairs(4, seed=2)
    with pytest.raises(TrainingDiagnosticError) as exc:
        pretrain_backbone(pairs, pairs, 2, SeededRng(32), iou_threshold=1.01)
    assert len(exc.value.history) == 2


def test_pretrain_empty_dataset():
    with pytest.raises(UsageError):
        pretrain_backbone([], [], 1, SeededRng(33))
