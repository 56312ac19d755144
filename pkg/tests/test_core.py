from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from midas import autodiff as ad
from midas.autodiff import Tensor
from midas.config import ConfigError, ExperimentConfig
from midas.core import (AlphaState, MisalignedPlan, MisalignedSample,
                        alpha_update, build_misaligned_features,
                        confidence_label, hard_sample_weight,
                        hard_sample_weights, least_confident_modality,
                        loss_align_uni, loss_mis, normalized_multimodal_confidence,
                        pair_batch, total_loss, train)
from midas.data import generate_synthetic

from conftest import tiny_cfg, tiny_dataset, tiny_model, tiny_spec


class _FixedPermRng:
    """Stub rng whose permutation() is pinned, for hand-traced pairings."""

    def __init__(self, perm):
        self.perm = np.asarray(perm)

    def permutation(self, n):
        assert n == len(self.perm)
        return self.perm.copy()


# ---------------------------------------------------------------------------
# pair_batch
# ---------------------------------------------------------------------------

def test_pair_batch_manual_trace():
    # partner permutation [2, 3, 0, 1]: anchors whose partner shares their
    # label are skipped, the others plan both swap orientations
    labels = [1, 2, 1, 3]
    plan = pair_batch(labels, _FixedPermRng([2, 3, 0, 1]), num_modalities=2)
    assert plan.batch_size == 4
    assert [s.anchor for s in plan.samples] == [1, 1, 3, 3]
    assert plan.samples[0] == MisalignedSample(1, (1, 3), (2, 3), (1,))
    assert plan.samples[1] == MisalignedSample(1, (3, 1), (3, 2), (0,))
    assert plan.samples[2] == MisalignedSample(3, (3, 1), (3, 2), (1,))
    assert plan.samples[3] == MisalignedSample(3, (1, 3), (2, 3), (0,))


def test_pair_batch_all_same_label_is_empty():
    plan = pair_batch([2, 2, 2, 2], np.random.default_rng(0))
    assert len(plan) == 0


def test_pair_batch_deterministic_in_seed():
    labels = np.random.default_rng(5).integers(1, 4, 32)
    a = pair_batch(labels, np.random.default_rng(9))
    b = pair_batch(labels, np.random.default_rng(9))
    assert a == b


def test_pair_batch_undersized_batch():
    assert len(pair_batch([1], np.random.default_rng(0))) == 0
    assert len(pair_batch([1, 2], np.random.default_rng(0), num_modalities=3)) == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 3), st.integers(2, 12))
def test_pair_batch_plan_validity(seed, m, b):
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, 4, b)
    plan = pair_batch(labels, rng, num_modalities=m)
    for s in plan.samples:
        assert len(set(s.labels)) >= 2
        assert len(s.replaced) >= 1
        assert all(s.labels[k] == labels[s.sources[k]] for k in range(m))
        assert all(s.sources[k] != s.anchor for k in s.replaced)
        if m > 2:
            assert len(set(s.sources)) == m
            assert s.anchor in s.sources


def test_pair_batch_symmetric_pairs_share_indices():
    labels = np.random.default_rng(1).integers(1, 5, 16)
    plan = pair_batch(labels, np.random.default_rng(2))
    assert len(plan) % 2 == 0
    for first, second in zip(plan.samples[::2], plan.samples[1::2]):
        assert first.anchor == second.anchor
        assert first.sources == (second.sources[1], second.sources[0])


# ---------------------------------------------------------------------------
# feature assembly
# ---------------------------------------------------------------------------

def test_build_misaligned_identity_assembly():
    feats = [Tensor(np.arange(8.0).reshape(4, 2)),
             Tensor(np.arange(12.0).reshape(4, 3))]
    plan = MisalignedPlan(
        (MisalignedSample(2, (2, 2), (1, 1), (0,)),), 4, 2)
    out = build_misaligned_features(feats, plan)
    assert np.array_equal(out[0].values, feats[0].values[[2]])
    assert np.array_equal(out[1].values, feats[1].values[[2]])


def test_build_misaligned_pairs_rows():
    feats = [Tensor(np.arange(8.0).reshape(4, 2)),
             Tensor(np.arange(12.0).reshape(4, 3))]
    plan = MisalignedPlan(
        (MisalignedSample(0, (0, 3), (1, 2), (1,)),), 4, 2)
    out = build_misaligned_features(feats, plan)
    assert np.array_equal(out[0].values[0], feats[0].values[0])
    assert np.array_equal(out[1].values[0], feats[1].values[3])


def test_build_misaligned_rejects_out_of_range():
    feats = [Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2)))]
    plan = MisalignedPlan(
        (MisalignedSample(0, (0, 5), (1, 2), (1,)),), 2, 2)
    with pytest.raises(IndexError):
        build_misaligned_features(feats, plan)


def test_feature_level_equals_input_level_loss():
    # assembling encoder outputs must match encoding assembled inputs
    model = tiny_model(seed=21)
    dataset = generate_synthetic(tiny_spec(seed=21))
    idx = dataset.split_indices("train")[:16]
    xs = [dataset.features[m][idx] for m in range(2)]
    labels = dataset.labels[idx]
    plan = pair_batch(labels, np.random.default_rng(3))
    sources = plan.slot_sources()

    feats = [model.encode(m, x) for m, x in enumerate(xs)]
    feature_level = model.fuse_predict(build_misaligned_features(feats, plan))

    mis_inputs = [xs[m][sources[:, m]] for m in range(2)]
    input_level = model.fuse_predict(
        [model.encode(m, x) for m, x in enumerate(mis_inputs)])

    target = np.eye(3)[plan.slot_labels()[:, 0] - 1]
    lf = ad.cross_entropy_soft(feature_level, target).values
    li = ad.cross_entropy_soft(input_level, target).values
    assert np.all(np.abs(lf - li) <= 1e-10)


# ---------------------------------------------------------------------------
# confidence labeling
# ---------------------------------------------------------------------------

def _slot_probs_for(conf_pairs, num_classes=4):
    """Probability rows placing the requested mass on labels (1, 2)."""
    n = len(conf_pairs)
    slot_probs = np.zeros((n, 2, num_classes))
    slot_labels = np.tile([1, 2], (n, 1))
    for i, (c1, c2) in enumerate(conf_pairs):
        slot_probs[i, 0, 0] = c1
        slot_probs[i, 0, 1:] = (1 - c1) / (num_classes - 1)
        slot_probs[i, 1, 1] = c2
        slot_probs[i, 1, 0] = (1 - c2) / (num_classes - 1)
    return slot_probs, slot_labels


@pytest.mark.parametrize("pair, expected", [
    ((0.9, 0.3), (0.75, 0.25)),
    ((0.5, 0.5), (0.5, 0.5)),
    ((0.2, 0.6), (0.25, 0.75)),
])
def test_confidence_label_values(pair, expected):
    slot_probs, slot_labels = _slot_probs_for([pair])
    c_tilde, y_soft = confidence_label(slot_probs, slot_labels, 4)
    assert np.all(np.abs(c_tilde[0] - expected) <= 1e-12)
    assert y_soft[0, 0] == pytest.approx(expected[0], abs=1e-12)
    assert y_soft[0, 1] == pytest.approx(expected[1], abs=1e-12)
    assert np.all(y_soft[0, 2:] == 0.0)


def test_confidence_label_soft_target_on_shared_label():
    # two slots carrying the same label stack their mass on one class
    slot_probs = np.zeros((1, 3, 3))
    slot_probs[0, 0, 0] = 0.6
    slot_probs[0, 1, 0] = 0.2
    slot_probs[0, 2, 1] = 0.2
    c_tilde, y_soft = confidence_label(slot_probs, [[1, 1, 2]], 3)
    assert y_soft[0, 0] == pytest.approx(0.8, abs=1e-12)
    assert y_soft[0, 1] == pytest.approx(0.2, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(2, 6))
def test_confidence_label_simplex_property(seed, m, c):
    rng = np.random.default_rng(seed)
    slot_probs = ad.softmax_values(rng.standard_normal((5, m, c)))
    slot_labels = rng.integers(1, c + 1, (5, m))
    c_tilde, y_soft = confidence_label(slot_probs, slot_labels, c)
    assert np.all(np.abs(c_tilde.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(y_soft >= 0.0)
    assert np.all(np.abs(y_soft.sum(axis=1) - 1.0) <= 1e-12)


# ---------------------------------------------------------------------------
# hard-sample weighting
# ---------------------------------------------------------------------------

def test_hard_sample_weight_cases():
    v = np.array([1.0, 2.0, 3.0])
    assert hard_sample_weight([v], [v.copy()]) == pytest.approx(1.0, abs=1e-12)
    assert hard_sample_weight([np.array([1.0, 0.0])],
                              [np.array([0.0, 1.0])]) == pytest.approx(0.0, abs=1e-12)
    # three modalities, two replaced slots with similarities {1, 0}
    mixed = hard_sample_weight(
        [np.array([1.0, 0.0]), np.array([0.0, 2.0])],
        [np.array([2.0, 0.0]), np.array([3.0, 0.0])])
    assert mixed == pytest.approx(0.5, abs=1e-12)


def test_hard_sample_weights_batch_matches_kernel():
    feats = [np.random.default_rng(4).standard_normal((6, 3)) for _ in range(2)]
    plan = pair_batch([1, 2, 3, 1, 2, 3], np.random.default_rng(5))
    out = hard_sample_weights(feats, plan)
    for k, s in enumerate(plan.samples):
        (m,) = s.replaced
        expected = ad.cosine_similarity(feats[m][s.anchor], feats[m][s.sources[m]])
        assert out[k] == pytest.approx(expected, abs=1e-12)


def test_hard_sample_weight_requires_replaced_slot():
    with pytest.raises(ValueError):
        hard_sample_weight([], [])


# ---------------------------------------------------------------------------
# least confident modality and multimodal confidence
# ---------------------------------------------------------------------------

def test_least_confident_cases():
    assert least_confident_modality([[0.6, 0.4]]) == 1
    assert least_confident_modality([[0.5, 0.5]]) == 0  # tie -> lowest index
    assert least_confident_modality([[0.4, 0.35, 0.25]]) == 2
    assert least_confident_modality(np.zeros((0, 2))) is None


@pytest.mark.parametrize("p, labels, expected", [
    ([0.2, 0.3, 0.5], [1, 2], [0.4, 0.6]),
    ([1.0, 0.0, 0.0], [1, 2], [1.0, 0.0]),
    ([0.25, 0.25, 0.5], [1, 2], [0.5, 0.5]),
])
def test_normalized_multimodal_confidence(p, labels, expected):
    out = normalized_multimodal_confidence(np.array(p), labels)
    assert np.all(np.abs(out - expected) <= 1e-12)


def test_normalized_multimodal_confidence_distinct_label_denominator():
    # repeated labels are counted once in the denominator
    out = normalized_multimodal_confidence(
        np.array([0.2, 0.3, 0.5]), [1, 1, 2])
    assert np.all(np.abs(out - [0.4, 0.4, 0.6]) <= 1e-12)


# ---------------------------------------------------------------------------
# alpha dynamics
# ---------------------------------------------------------------------------

def test_alpha_update_underestimated_modality_grows():
    state = AlphaState.initial(2, eta=0.05)
    # modality 2 least confident; fused model under-credits it
    new = alpha_update(state, [[0.75, 0.25]], [[0.9, 0.10]])
    assert new.alpha[1] == pytest.approx(1.05, abs=1e-15)
    assert new.alpha[0] == 1.0
    assert new.t == 1


def test_alpha_update_balanced_signal_keeps_alpha():
    state = AlphaState.initial(2, eta=0.05)
    new = alpha_update(state, [[0.7, 0.3]], [[0.4, 0.3]])
    assert new.alpha[1] == 1.0


def test_alpha_update_floor():
    state = AlphaState.initial(2, eta=0.05)
    new = alpha_update(state, [[0.7, 0.3]], [[0.1, 0.9]])
    assert new.alpha[1] == 1.0  # max(1, 1 - 0.05)


def test_alpha_update_resets_other_modalities():
    state = AlphaState(np.array([8, 0]), eta=0.05, t=7)  # alpha = (1.4, 1.0)
    # modality 2 becomes least confident; fused under-credits it
    new = alpha_update(state, [[0.7, 0.3]], [[0.7, 0.1]])
    assert new.alpha[0] == 1.0
    assert new.alpha[1] == pytest.approx(1.05)
    assert new.t == 8


def test_alpha_update_empty_batch_unchanged():
    state = AlphaState(np.array([4, 0]), eta=0.05, t=3)  # alpha = (1.2, 1.0)
    assert alpha_update(state, np.zeros((0, 2)), np.zeros((0, 2))) is state


def test_alpha_k_consecutive_positive_signals():
    state = AlphaState.initial(2, eta=0.05)
    for k in range(1, 9):
        state = alpha_update(state, [[0.7, 0.3]], [[0.8, 0.1]])
        assert state.alpha[1] == 1.0 + k * 0.05  # exact, not approximate


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_alpha_invariants(seed, m):
    rng = np.random.default_rng(seed)
    state = AlphaState.initial(m, eta=0.05)
    for _ in range(10):
        c = rng.dirichlet(np.ones(m), size=4)
        mc = rng.uniform(0, 1, (4, m))
        state = alpha_update(state, c, mc)
        assert np.all(state.alpha >= 1.0)
        assert np.sum(state.alpha > 1.0) <= 1


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _ce_soft_scalar(p, target):
    return float(-np.sum(np.asarray(target) * np.log(p)))


def test_loss_mis_reduces_to_plain_soft_ce():
    logits = Tensor([[math.log(0.7), math.log(0.3)]])
    c_tilde = np.array([[0.75, 0.25]])
    out = loss_mis(logits, c_tilde, [[1, 2]], alpha=[1.0, 1.0], s_tilde=[-1.0])
    expected = _ce_soft_scalar([0.7, 0.3], [0.75, 0.25])
    assert out.values[0] == pytest.approx(expected, abs=1e-12)


def test_loss_mis_hand_instance():
    logits = Tensor([[math.log(0.7), math.log(0.3)]])
    out = loss_mis(logits, [[0.75, 0.25]], [[1, 2]], alpha=[1.0, 1.0],
                   s_tilde=[0.0])
    assert out.values[0] == pytest.approx(1.5 * 0.56849, abs=1e-4)
    assert out.values[0] == pytest.approx(0.85274, abs=1e-4)


def test_loss_mis_alpha_scales_only_its_label_term():
    logits = Tensor([[math.log(0.7), math.log(0.3)]])
    out = loss_mis(logits, [[0.75, 0.25]], [[1, 2]], alpha=[1.05, 1.0],
                   s_tilde=[-1.0])
    expected = -(1.05 * 0.75) * math.log(0.7) - 0.25 * math.log(0.3)
    assert out.values[0] == pytest.approx(expected, abs=1e-12)


def test_loss_mis_prefactor_bounds_and_monotonicity():
    logits = Tensor(np.tile([[0.4, -0.2, 0.1]], (5, 1)))
    c_tilde = np.tile([[0.6, 0.4]], (5, 1))
    labels = np.tile([[1, 2]], (5, 1))
    s_grid = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    out = loss_mis(logits, c_tilde, labels, [1.0, 1.0], s_grid).values
    base = out[0]
    ratios = out / base
    assert np.all(ratios >= 1.0 - 1e-12)
    assert np.all(ratios <= 2.0 + 1e-12)
    assert np.all(np.diff(out) > 0)  # non-decreasing in s


def test_loss_mis_validates_weights():
    logits = Tensor([[0.0, 0.0]])
    with pytest.raises(ValueError, match=">= 1"):
        loss_mis(logits, [[0.5, 0.5]], [[1, 2]], [0.9, 1.0], [-1.0])
    with pytest.raises(ValueError, match="hard-sample"):
        loss_mis(logits, [[0.5, 0.5]], [[1, 2]], [1.0, 1.0], [1.5])


def test_loss_align_uni_perfect_predictions():
    logits = Tensor([[300.0, 0.0]])
    uni = [Tensor([[300.0, 0.0]]), Tensor([[300.0, 0.0]])]
    l_align, l_uni = loss_align_uni(logits, uni, [1])
    assert l_align.values[0] == pytest.approx(0.0, abs=1e-12)
    assert l_uni.values[0] == pytest.approx(0.0, abs=1e-12)


def test_loss_align_uni_uniform_predictions():
    c = 5
    logits = Tensor(np.zeros((2, c)))
    uni = [Tensor(np.zeros((2, c))) for _ in range(3)]
    l_align, l_uni = loss_align_uni(logits, uni, [1, 4])
    assert np.all(np.abs(l_align.values - math.log(c)) <= 1e-12)
    assert np.all(np.abs(l_uni.values - 3 * math.log(c)) <= 1e-12)


def test_loss_align_uni_matches_scalar_reference():
    rng = np.random.default_rng(11)
    logits = rng.standard_normal((4, 3))
    uni = [rng.standard_normal((4, 3)) for _ in range(2)]
    labels = rng.integers(1, 4, 4)
    l_align, l_uni = loss_align_uni(Tensor(logits), [Tensor(u) for u in uni], labels)
    for i in range(4):
        p = ad.softmax_values(logits[i])
        assert l_align.values[i] == pytest.approx(
            -math.log(p[labels[i] - 1]), abs=1e-12)
        expected_uni = sum(
            -math.log(ad.softmax_values(u[i])[labels[i] - 1]) for u in uni)
        assert l_uni.values[i] == pytest.approx(expected_uni, abs=1e-12)


def test_loss_align_uni_rejects_out_of_range_label():
    with pytest.raises(ValueError, match=r"\[1, 2\]"):
        loss_align_uni(Tensor(np.zeros((1, 2))), [Tensor(np.zeros((1, 2)))], [3])


def test_total_loss_lambda_zero_is_aligned_mean():
    rng = np.random.default_rng(12)
    l_align = Tensor(rng.uniform(0, 2, 6))
    l_uni = Tensor(rng.uniform(0, 2, 6))
    l_mis = Tensor(rng.uniform(0, 2, 4))
    plan = pair_batch([1, 2, 1, 2, 3, 3], _FixedPermRng([1, 0, 3, 2, 4, 5]))
    total = total_loss(l_align, l_uni, l_mis, plan, lam=0.0)
    expected = float(np.mean(l_align.values + l_uni.values))
    assert total.item() == pytest.approx(expected, abs=1e-12)


def test_total_loss_single_sample_components():
    plan = MisalignedPlan(
        (MisalignedSample(0, (0, 0), (1, 2), (1,)),), 1, 2)
    total = total_loss(Tensor([0.3]), Tensor([0.5]), Tensor([0.2]), plan, lam=2.0)
    assert total.item() == pytest.approx(1.2, abs=1e-12)


def test_total_loss_empty_plan_is_aligned_only():
    total = total_loss(Tensor([0.3]), Tensor([0.5]), None,
                       MisalignedPlan((), 1, 2), lam=3.0)
    assert total.item() == pytest.approx(0.8, abs=1e-12)


def test_total_loss_averages_anchor_samples():
    # one anchor with two planned samples: they average, not sum
    samples = (MisalignedSample(0, (0, 1), (1, 2), (1,)),
               MisalignedSample(0, (1, 0), (2, 1), (0,)))
    plan = MisalignedPlan(samples, 2, 2)
    total = total_loss(Tensor([0.0, 0.0]), Tensor([0.0, 0.0]),
                       Tensor([0.4, 0.8]), plan, lam=1.0)
    assert total.item() == pytest.approx(0.5 * (0.4 + 0.8) / 2, abs=1e-12)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_train_pure_warmup_leaves_fusion_untouched(tiny_cfg, tiny_dataset):
    cfg = replace(tiny_cfg, epochs=2, warmup_epochs=2)
    model = tiny_model()
    before = [p.values.copy() for p in model.fusion_params()]
    encoder_before = [p.values.copy() for p in model.encoder_params()]
    train(cfg, model, tiny_dataset)
    for p, b in zip(model.fusion_params(), before):
        assert np.array_equal(p.values, b)
    changed = any(not np.array_equal(p.values, b)
                  for p, b in zip(model.encoder_params(), encoder_before))
    assert changed


def _rows_equal(a, b) -> bool:
    """TraceRow equality with nan == nan, so identical runs compare equal."""
    return (a.epoch, a.step) == (b.epoch, b.step) and all(
        np.array_equal(np.asarray(getattr(a, f), dtype=float),
                       np.asarray(getattr(b, f), dtype=float), equal_nan=True)
        for f in ("alpha", "uni_conf", "multi_conf", "loss_align", "loss_uni",
                  "loss_mis", "loss_total"))


def test_train_deterministic(tiny_cfg, tiny_dataset):
    results = []
    for _ in range(2):
        model = tiny_model()
        res = train(tiny_cfg, model, tiny_dataset)
        results.append((
            [p.values.copy() for p in model.parameters()], res.trace))
    params_a, trace_a = results[0]
    params_b, trace_b = results[1]
    assert all(np.array_equal(a, b) for a, b in zip(params_a, params_b))
    assert len(trace_a) == len(trace_b)
    assert all(_rows_equal(a, b) for a, b in zip(trace_a, trace_b))


def test_train_loss_decreases(tiny_cfg):
    dataset = generate_synthetic(tiny_spec(num_classes=2, n_train=64, seed=2))
    cfg = replace(tiny_cfg, epochs=5, warmup_epochs=0, batch_size=8,
                  learning_rate=0.01)
    model = tiny_model(num_classes=2)
    res = train(cfg, model, dataset)
    # compare against the first step whose batch carries a misaligned term,
    # so both ends of the comparison sum the same loss components
    first = next(r for r in res.trace if r.loss_mis > 0)
    assert res.trace[-1].loss_total < first.loss_total


def test_train_rejects_warmup_exceeding_epochs(tiny_cfg, tiny_dataset):
    cfg = replace(tiny_cfg, epochs=2, warmup_epochs=5)
    with pytest.raises(ConfigError):
        train(cfg, tiny_model(), tiny_dataset)


def test_train_joint_mode_never_touches_unimodal_heads(tiny_cfg, tiny_dataset):
    cfg = replace(tiny_cfg, mode="joint")
    model = tiny_model()
    uni_before = [p.values.copy() for p in model.unimodal_params()]
    res = train(cfg, model, tiny_dataset)
    for p, b in zip(model.unimodal_params(), uni_before):
        assert np.array_equal(p.values, b)
    for row in res.trace:
        assert row.alpha == (1.0, 1.0)
        assert math.isnan(row.loss_uni)


def test_train_wm_off_freezes_alpha(tiny_cfg, tiny_dataset):
    cfg = replace(tiny_cfg, wm=False)
    res = train(cfg, tiny_model(), tiny_dataset)
    assert all(row.alpha == (1.0, 1.0) for row in res.trace)


def test_train_warmup_rows_have_nan_confidences(tiny_cfg, tiny_dataset):
    res = train(tiny_cfg, tiny_model(), tiny_dataset)
    warm = [r for r in res.trace if r.epoch < 1]
    main = [r for r in res.trace if r.epoch >= 1]
    assert warm and main
    assert all(math.isnan(r.uni_conf[0]) and math.isnan(r.loss_align) for r in warm)
    assert any(not math.isnan(r.uni_conf[0]) for r in main)


def test_train_alpha_reset_per_epoch(tiny_cfg, tiny_dataset):
    cfg = replace(tiny_cfg, alpha_reset_per_epoch=True, epochs=4, warmup_epochs=1)
    res = train(cfg, tiny_model(), tiny_dataset)
    first_steps = {}
    for row in res.trace:
        if row.epoch >= 1 and row.epoch not in first_steps:
            first_steps[row.epoch] = row
    # the first update of each epoch starts from a freshly reset state
    for row in first_steps.values():
        assert all(a <= 1.0 + cfg.eta + 1e-12 for a in row.alpha)


def test_train_select_best_restores_best_epoch(tiny_cfg, tiny_dataset):
    cfg = replace(tiny_cfg, select_best=True, epochs=4)
    model = tiny_model()
    res = train(cfg, model, tiny_dataset)
    assert res.best_epoch is not None
    assert 0 <= res.best_epoch < 4


def test_train_gradient_correctness_of_total_loss():
    # every composite objective must agree with finite differences
    cfg = ExperimentConfig(synthetic=tiny_spec(), hidden=(8,), feature_dim=6,
                           batch_size=8, epochs=1, plots=False)
    from midas.cli import run_gradcheck
    results = run_gradcheck(cfg)
    assert results["loss_total"] <= 1e-4
    assert results["loss_mis"] <= 1e-4
