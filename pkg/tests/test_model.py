from __future__ import annotations

import numpy as np
import pytest

from midas.autodiff import Tensor
from midas.model import (CheckpointError, EncoderSpec, MultimodalModel,
                         load_checkpoint, save_checkpoint)

from conftest import tiny_model


def _zero_params(tensors):
    for p in tensors:
        p.values[...] = 0.0


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------

def test_encode_zero_weights_give_zero_features():
    model = tiny_model()
    _zero_params(model.encoder_params())
    out = model.encode(0, np.ones((3, 5)))
    assert np.array_equal(out.values, np.zeros((3, 6)))


def test_encode_deterministic():
    model = tiny_model(seed=4)
    x = np.random.default_rng(1).standard_normal((4, 5))
    assert np.array_equal(model.encode(0, x).values, model.encode(0, x).values)


def test_encode_matches_straight_line_reference():
    model = tiny_model(seed=9)
    x = np.random.default_rng(2).standard_normal((7, 4))
    out = model.encode(1, x).values
    # independent re-evaluation of the same matmul/relu chain
    h = x
    layers = model.encoders[1]
    for lin in layers[:-1]:
        h = np.maximum(h @ lin.weight.values + lin.bias.values, 0.0)
    ref = h @ layers[-1].weight.values + layers[-1].bias.values
    assert np.allclose(out, ref, atol=1e-14)


def test_encode_rejects_bad_modality_and_width():
    model = tiny_model()
    with pytest.raises(IndexError):
        model.encode(2, np.ones((1, 5)))
    with pytest.raises(ValueError, match="expects"):
        model.encode(0, np.ones((1, 4)))


# ---------------------------------------------------------------------------
# fuse_predict
# ---------------------------------------------------------------------------

def test_fuse_ignores_modality_with_zero_columns():
    model = tiny_model()
    model.fusion.weight.values[6:, :] = 0.0  # modality-2 feature block
    rng = np.random.default_rng(3)
    f1 = Tensor(rng.standard_normal((5, 6)))
    out_a = model.fuse_predict([f1, Tensor(rng.standard_normal((5, 6)))])
    out_b = model.fuse_predict([f1, Tensor(rng.standard_normal((5, 6)))])
    assert np.array_equal(out_a.values, out_b.values)


def test_fuse_zero_features_give_bias():
    model = tiny_model()
    out = model.fuse_predict([Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6)))])
    assert np.allclose(out.values, np.tile(model.fusion.bias.values, (2, 1)), atol=0)


def test_fuse_concatenation_order_identity():
    # permuting modality blocks together with the matching weight rows
    # leaves the logits unchanged
    model = tiny_model()
    rng = np.random.default_rng(4)
    feats = [rng.standard_normal((3, 6)), rng.standard_normal((3, 6))]
    base = model.fuse_predict([Tensor(f) for f in feats]).values

    permuted = tiny_model()
    _zero_params(permuted.parameters())
    w = model.fusion.weight.values
    permuted.fusion.weight.values[...] = np.vstack([w[6:, :], w[:6, :]])
    permuted.fusion.bias.values[...] = model.fusion.bias.values
    swapped = permuted.fuse_predict([Tensor(feats[1]), Tensor(feats[0])]).values
    assert np.allclose(base, swapped, atol=1e-14)


def test_fuse_rejects_wrong_block_count_and_width():
    model = tiny_model()
    with pytest.raises(ValueError, match="feature blocks"):
        model.fuse_predict([Tensor(np.zeros((1, 6)))])
    with pytest.raises(ValueError, match="width"):
        model.fuse_predict([Tensor(np.zeros((1, 6))), Tensor(np.zeros((1, 5)))])


# ---------------------------------------------------------------------------
# unimodal_predict
# ---------------------------------------------------------------------------

def test_unimodal_zero_feature_gives_bias():
    model = tiny_model()
    out = model.unimodal_predict(0, Tensor(np.zeros((2, 6))))
    assert np.array_equal(out.values, np.tile(model.unimodal[0].bias.values, (2, 1)))


def test_unimodal_identity_head():
    model = tiny_model(num_classes=6)  # d_m == C
    model.unimodal[0].weight.values[...] = np.eye(6)
    model.unimodal[0].bias.values[...] = 0.0
    f = np.random.default_rng(5).standard_normal((3, 6))
    assert np.allclose(model.unimodal_predict(0, Tensor(f)).values, f, atol=0)


def test_unimodal_matches_matmul_reference():
    model = tiny_model(seed=11)
    f = np.random.default_rng(6).standard_normal((4, 6))
    ref = f @ model.unimodal[1].weight.values + model.unimodal[1].bias.values
    assert np.allclose(model.unimodal_predict(1, Tensor(f)).values, ref, atol=1e-14)


# ---------------------------------------------------------------------------
# shared-pathway invariants
# ---------------------------------------------------------------------------

def test_forward_all_shares_feature_tensors():
    model = tiny_model()
    rng = np.random.default_rng(7)
    xs = [rng.standard_normal((4, 5)), rng.standard_normal((4, 4))]
    feats, fused, uni = model.forward_all(xs)
    # the exact tensors feed both heads, so both pathways see identical bits
    refused = model.fuse_predict(feats)
    assert np.array_equal(fused.values, refused.values)
    for m, f in enumerate(feats):
        again = model.unimodal_predict(m, f)
        assert np.array_equal(uni[m].values, again.values)


def test_zero_substitution_consistency_with_fuse():
    model = tiny_model()
    rng = np.random.default_rng(8)
    feats = [rng.standard_normal((3, 6)), rng.standard_normal((3, 6))]
    direct = model.fuse_predict(
        [Tensor(feats[0]), Tensor(np.zeros_like(feats[1]))]).values
    manual = np.concatenate([feats[0], np.zeros_like(feats[1])], axis=1)
    assert np.array_equal(
        direct, manual @ model.fusion.weight.values + model.fusion.bias.values)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = tiny_model(seed=13, hidden=(8, 7))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.num_classes == model.num_classes
    assert loaded.encoder_specs == model.encoder_specs
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert np.array_equal(a.values, b.values)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMIDAS 2 3\nparams 0\n")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncated_payload(tmp_path):
    model = tiny_model()
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(path)


def test_encoder_spec_rejects_bad_widths():
    with pytest.raises(ValueError, match="widths"):
        EncoderSpec(0, (4,), 3)


def test_model_needs_two_modalities():
    with pytest.raises(ValueError, match="two modalities"):
        MultimodalModel([EncoderSpec(3, (4,), 2)], num_classes=2)
