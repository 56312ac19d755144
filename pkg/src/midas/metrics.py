"""Evaluation and imbalance diagnostics: accuracy, macro F1, misaligned
top-2 accuracy, confidence traces, zero-substitution modality valuation,
and the CSV artifacts (one-row report, per-step trace)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import core
from .core import MisalignedPlan, TraceRow
from .data import FeatureDataset
from .model import MultimodalModel


# ---------------------------------------------------------------------------
# Scalar metrics
# ---------------------------------------------------------------------------

def predicted_labels(scores) -> np.ndarray:
    """1-based argmax labels from a [N, C] score matrix."""
    return np.argmax(np.asarray(scores), axis=1) + 1


def top1_accuracy(scores, labels) -> float:
    """Percentage of rows whose argmax class matches the 1-based label."""
    scores = np.asarray(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape[0] != labels.shape[0]:
        raise ValueError(
            f"scores rows {scores.shape[0]} != labels {labels.shape[0]}"
        )
    if labels.size == 0:
        return 0.0
    return float(np.mean(predicted_labels(scores) == labels) * 100.0)


def macro_f1(scores, labels, num_classes: int) -> float:
    """Unweighted mean over classes of 2PR/(P+R), in percent.

    A class with P + R = 0 contributes an F1 of 0.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape[0] != labels.shape[0]:
        raise ValueError(
            f"scores rows {scores.shape[0]} != labels {labels.shape[0]}"
        )
    preds = predicted_labels(scores)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels - 1, preds - 1), 1)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    return float(f1.mean() * 100.0)


def top2_classes(prob_row) -> tuple[int, int]:
    """The two highest-probability classes (1-based); probability ties go to
    the lower class index."""
    order = np.argsort(-np.asarray(prob_row), kind="stable")
    return int(order[0]) + 1, int(order[1]) + 1


def misaligned_top2_accuracy(probs, label_pairs) -> float:
    """Percentage of items whose two source labels are exactly the model's
    two top-probability classes, as an unordered set."""
    probs = np.asarray(probs, dtype=np.float64)
    pairs = np.asarray(label_pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("label_pairs must be [N, 2]")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise ValueError("misaligned items need two distinct ground-truth labels")
    if pairs.shape[0] == 0:
        return 0.0
    hits = 0
    for row, pair in zip(probs, pairs):
        if set(top2_classes(row)) == set(int(p) for p in pair):
            hits += 1
    return 100.0 * hits / pairs.shape[0]


# ---------------------------------------------------------------------------
# Frozen-model forward helpers (values only, no tape)
# ---------------------------------------------------------------------------

def _frozen_features(model: MultimodalModel, dataset: FeatureDataset,
                     indices: np.ndarray) -> list[np.ndarray]:
    return [model.encode(m, dataset.features[m][indices]).values
            for m in range(model.num_modalities)]


def _fused_probs(model: MultimodalModel, features: list[np.ndarray]) -> np.ndarray:
    logits = model.fuse_predict([ad.Tensor(f) for f in features])
    return ad.softmax_values(logits.values)


@dataclass(frozen=True)
class MisalignedEvalSet:
    """A frozen misaligned evaluation split: which dataset rows feed each
    slot, and each item's per-slot source labels."""

    base_indices: np.ndarray
    plan: MisalignedPlan

    def __len__(self) -> int:
        return len(self.plan)


def build_misaligned_eval_set(dataset: FeatureDataset, split: str, seed: int,
                              num_modalities: int | None = None) -> MisalignedEvalSet:
    """Deterministic misaligned pairs over one split (whole split, one pass)."""
    indices = dataset.split_indices(split)
    m = num_modalities or dataset.num_modalities
    rng = np.random.default_rng([seed, 5])
    plan = core.pair_batch(dataset.labels[indices], rng, m)
    return MisalignedEvalSet(indices, plan)


def misaligned_probs_and_stats(model: MultimodalModel, dataset: FeatureDataset,
                               eval_set: MisalignedEvalSet):
    """Fused probabilities on the misaligned items plus the per-slot
    unimodal confidences and normalized fused confidences.

    Returns (probs [n, C], slot_labels [n, M], c_tilde [n, M], multi [n, M]).
    """
    feats = _frozen_features(model, dataset, eval_set.base_indices)
    plan = eval_set.plan
    sources = plan.slot_sources()
    slot_labels = plan.slot_labels()
    mis_feats = [feats[m][sources[:, m]] for m in range(model.num_modalities)]
    probs = _fused_probs(model, mis_feats)
    uni_probs = [
        ad.softmax_values(model.unimodal_predict(m, ad.Tensor(feats[m])).values)
        for m in range(model.num_modalities)
    ]
    slot_probs = np.stack(
        [uni_probs[m][sources[:, m]] for m in range(model.num_modalities)], axis=1)
    c_tilde, _ = core.confidence_label(slot_probs, slot_labels, model.num_classes)
    multi = core.normalized_multimodal_confidences(probs, slot_labels)
    return probs, slot_labels, c_tilde, multi


def confidence_trace(model: MultimodalModel, dataset: FeatureDataset,
                     eval_set: MisalignedEvalSet) -> tuple[np.ndarray, np.ndarray]:
    """Mean per-modality unimodal and fused normalized confidences on a
    frozen misaligned eval set."""
    _, _, c_tilde, multi = misaligned_probs_and_stats(model, dataset, eval_set)
    return c_tilde.mean(axis=0), multi.mean(axis=0)


def zero_substitution_valuation(model: MultimodalModel, dataset: FeatureDataset,
                                split: str) -> np.ndarray:
    """Per-modality accuracy with every other modality's features zeroed
    before fusion, in percent."""
    indices = dataset.split_indices(split)
    feats = _frozen_features(model, dataset, indices)
    labels = dataset.labels[indices]
    out = np.empty(model.num_modalities)
    for target in range(model.num_modalities):
        masked = [f if m == target else np.zeros_like(f)
                  for m, f in enumerate(feats)]
        out[target] = top1_accuracy(_fused_probs(model, masked), labels)
    return out


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    """One evaluation snapshot: aligned quality, misaligned diagnostics,
    and per-modality valuation."""

    top1_acc: float
    macro_f1: float
    mis_top2_acc: float
    uni_conf: tuple[float, ...]
    multi_conf: tuple[float, ...]
    zero_sub_acc: tuple[float, ...]


def evaluate_model(model: MultimodalModel, dataset: FeatureDataset, seed: int,
                   split: str = "val") -> EvalReport:
    """Full report on one split; the misaligned eval set always comes from
    the validation split with the given seed."""
    indices = dataset.split_indices(split)
    feats = _frozen_features(model, dataset, indices)
    probs = _fused_probs(model, feats)
    labels = dataset.labels[indices]

    eval_set = build_misaligned_eval_set(dataset, "val", seed, model.num_modalities)
    mis_probs, slot_labels, c_tilde, multi = misaligned_probs_and_stats(
        model, dataset, eval_set)
    # Top-2 matching is defined for items carrying exactly two distinct labels.
    distinct_two = np.array(
        [len(set(s.labels)) == 2 for s in eval_set.plan.samples], dtype=bool)
    if distinct_two.any():
        pairs = np.stack([
            [sorted(set(s.labels))[0], sorted(set(s.labels))[1]]
            for s, keep in zip(eval_set.plan.samples, distinct_two) if keep
        ])
        top2 = misaligned_top2_accuracy(mis_probs[distinct_two], pairs)
    else:
        top2 = float("nan")

    return EvalReport(
        top1_acc=top1_accuracy(probs, labels),
        macro_f1=macro_f1(probs, labels, model.num_classes),
        mis_top2_acc=top2,
        uni_conf=tuple(c_tilde.mean(axis=0)) if len(eval_set) else
        tuple([float("nan")] * model.num_modalities),
        multi_conf=tuple(multi.mean(axis=0)) if len(eval_set) else
        tuple([float("nan")] * model.num_modalities),
        zero_sub_acc=tuple(zero_substitution_valuation(model, dataset, split)),
    )


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def report_columns(num_modalities: int) -> list[str]:
    cols = ["top1_acc", "macro_f1", "mis_top2_acc"]
    cols += [f"uni_conf_{m + 1}" for m in range(num_modalities)]
    cols += [f"multi_conf_{m + 1}" for m in range(num_modalities)]
    cols += [f"zero_sub_acc_{m + 1}" for m in range(num_modalities)]
    return cols


def write_report_csv(report: EvalReport, path) -> None:
    m = len(report.uni_conf)
    row = [report.top1_acc, report.macro_f1, report.mis_top2_acc,
           *report.uni_conf, *report.multi_conf, *report.zero_sub_acc]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(report_columns(m))
        writer.writerow([_fmt(x) for x in row])


def read_report_csv(path) -> EvalReport:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, values = rows[0], [float(v) for v in rows[1]]
    m = sum(1 for c in header if c.startswith("uni_conf_"))
    return EvalReport(
        top1_acc=values[0], macro_f1=values[1], mis_top2_acc=values[2],
        uni_conf=tuple(values[3:3 + m]),
        multi_conf=tuple(values[3 + m:3 + 2 * m]),
        zero_sub_acc=tuple(values[3 + 2 * m:3 + 3 * m]),
    )


def trace_columns(num_modalities: int) -> list[str]:
    cols = ["epoch", "step"]
    cols += [f"alpha_{m + 1}" for m in range(num_modalities)]
    cols += [f"uni_conf_{m + 1}" for m in range(num_modalities)]
    cols += [f"multi_conf_{m + 1}" for m in range(num_modalities)]
    cols += ["loss_align", "loss_uni", "loss_mis", "loss_total"]
    return cols


def write_trace_csv(trace: list[TraceRow], num_modalities: int, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_columns(num_modalities))
        for row in trace:
            writer.writerow([
                str(row.epoch), str(row.step),
                *[_fmt(a) for a in row.alpha],
                *[_fmt(c) for c in row.uni_conf],
                *[_fmt(c) for c in row.multi_conf],
                _fmt(row.loss_align), _fmt(row.loss_uni),
                _fmt(row.loss_mis), _fmt(row.loss_total),
            ])


def read_trace_csv(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    m = sum(1 for c in header if c.startswith("alpha_"))
    out = []
    for raw in rows[1:]:
        vals = raw
        out.append(TraceRow(
            epoch=int(vals[0]), step=int(vals[1]),
            alpha=tuple(float(v) for v in vals[2:2 + m]),
            uni_conf=tuple(float(v) for v in vals[2 + m:2 + 2 * m]),
            multi_conf=tuple(float(v) for v in vals[2 + 2 * m:2 + 3 * m]),
            loss_align=float(vals[2 + 3 * m]),
            loss_uni=float(vals[3 + 3 * m]),
            loss_mis=float(vals[4 + 3 * m]),
            loss_total=float(vals[5 + 3 * m]),
        ))
    return out
