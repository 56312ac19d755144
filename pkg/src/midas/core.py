"""Training on misaligned multimodal samples.

A misaligned sample fills each modality slot from a different source instance
so that the slots carry at least two distinct labels. Its soft target weighs
the one-hot source labels by normalized unimodal confidences; a weak-modality
weight amplifies the target entry of the batch-wise least confident modality,
and a hard-sample weight scales the whole loss by how similar the swapped-in
features are to the ones they replaced. Aligned cross-entropy terms and the
misaligned term combine into one scalar objective per mini-batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Tape, SGD
from .config import ConfigError, ExperimentConfig
from .data import FeatureDataset, batch_iter
from .model import MultimodalModel

EPS_CONF = 1e-12


# ---------------------------------------------------------------------------
# Misaligned-sample planning and assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MisalignedSample:
    """One planned misaligned sample, indices local to its batch."""

    anchor: int
    sources: tuple[int, ...]   # source sample per modality slot
    labels: tuple[int, ...]    # 1-based source label per slot
    replaced: tuple[int, ...]  # slots whose source is not the anchor


@dataclass(frozen=True)
class MisalignedPlan:
    samples: tuple[MisalignedSample, ...] = ()
    batch_size: int = 0
    num_modalities: int = 2

    def __len__(self) -> int:
        return len(self.samples)

    def slot_sources(self) -> np.ndarray:
        return np.array([s.sources for s in self.samples], dtype=np.intp).reshape(
            len(self.samples), self.num_modalities)

    def slot_labels(self) -> np.ndarray:
        return np.array([s.labels for s in self.samples], dtype=np.int64).reshape(
            len(self.samples), self.num_modalities)

    def anchors(self) -> np.ndarray:
        return np.array([s.anchor for s in self.samples], dtype=np.intp)


def pair_batch(labels, rng: np.random.Generator, num_modalities: int = 2) -> MisalignedPlan:
    """Plan this batch's misaligned samples.

    Two modalities: one random permutation pairs each anchor with a partner;
    anchors whose partner shares their label are skipped, the rest plan both
    swap orientations. More modalities: each anchor draws distinct partners
    and a random slot permutation, discarded when all assigned labels agree.
    """
    labels = np.asarray(labels, dtype=np.int64)
    b = labels.shape[0]
    if b < 2:
        return MisalignedPlan((), b, num_modalities)

    samples: list[MisalignedSample] = []
    if num_modalities == 2:
        partner = rng.permutation(b)
        for i in range(b):
            j = int(partner[i])
            if labels[j] == labels[i]:
                continue
            yi, yj = int(labels[i]), int(labels[j])
            samples.append(MisalignedSample(i, (i, j), (yi, yj), (1,)))
            samples.append(MisalignedSample(i, (j, i), (yj, yi), (0,)))
    else:
        if b <= num_modalities - 1:
            return MisalignedPlan((), b, num_modalities)
        others = np.arange(b)
        for i in range(b):
            pool = others[others != i]
            partners = rng.choice(pool, size=num_modalities - 1, replace=False)
            sources_set = np.concatenate(([i], partners))
            perm = rng.permutation(num_modalities)
            sources = tuple(int(sources_set[p]) for p in perm)
            slot_labels = tuple(int(labels[s]) for s in sources)
            if len(set(slot_labels)) < 2:
                continue
            replaced = tuple(m for m, s in enumerate(sources) if s != i)
            samples.append(MisalignedSample(i, sources, slot_labels, replaced))
    return MisalignedPlan(tuple(samples), b, num_modalities)


def build_misaligned_features(features: list[Tensor], plan: MisalignedPlan) -> list[Tensor]:
    """Assemble per-slot feature rows from the already-computed batch features.

    Differentiable row gathers, so no encoder is re-run and gradients still
    reach the encoders through every slot.
    """
    sources = plan.slot_sources()
    return [ad.take_rows(f, sources[:, m]) for m, f in enumerate(features)]


# ---------------------------------------------------------------------------
# Confidence-based soft labels and sample weights (all detached coefficients)
# ---------------------------------------------------------------------------

def confidence_label(slot_probs, slot_labels, num_classes: int):
    """Normalized per-slot confidences and the resulting soft targets.

    slot_probs[i, m] is the unimodal probability row of slot m's source;
    slot m's confidence is that row's mass on its own source label,
    normalized across slots. The soft target mixes the one-hot source labels
    with those weights. Returns (c_tilde [n, M], y_soft [n, C]).
    """
    slot_probs = np.asarray(slot_probs, dtype=np.float64)
    slot_labels = np.asarray(slot_labels, dtype=np.int64)
    n, m = slot_labels.shape
    rows = np.arange(n)[:, None], np.arange(m)[None, :]
    conf = slot_probs[rows[0], rows[1], slot_labels - 1]
    denom = np.maximum(conf.sum(axis=1, keepdims=True), EPS_CONF)
    c_tilde = conf / denom
    y_soft = np.zeros((n, num_classes))
    np.add.at(y_soft, (np.repeat(np.arange(n), m), (slot_labels - 1).reshape(-1)),
              c_tilde.reshape(-1))
    return c_tilde, y_soft


def hard_sample_weight(original_features, swapped_features) -> float:
    """Mean cosine similarity between each replaced feature and its stand-in."""
    pairs = list(zip(original_features, swapped_features))
    if not pairs:
        raise ValueError("hard_sample_weight needs at least one replaced slot")
    sims = [ad.cosine_similarity(o, s) for o, s in pairs]
    return float(np.clip(np.mean(sims), -1.0, 1.0))


def hard_sample_weights(feature_values: list[np.ndarray], plan: MisalignedPlan) -> np.ndarray:
    """Hard-sample weight of every planned sample, in plan order."""
    out = np.empty(len(plan))
    for k, s in enumerate(plan.samples):
        out[k] = hard_sample_weight(
            [feature_values[m][s.anchor] for m in s.replaced],
            [feature_values[m][s.sources[m]] for m in s.replaced],
        )
    return out


def least_confident_modality(c_tilde) -> int | None:
    """Index of the modality with the lowest batch-mean confidence.

    Ties go to the lowest index; an empty batch yields None (no update).
    """
    c_tilde = np.asarray(c_tilde, dtype=np.float64)
    if c_tilde.shape[0] == 0:
        return None
    return int(np.argmin(c_tilde.mean(axis=0)))


def normalized_multimodal_confidence(probs, slot_labels) -> np.ndarray:
    """Fused-model probability of each slot's label, normalized over the
    sample's distinct source labels. One row [C] and labels [M] in, [M] out."""
    probs = np.asarray(probs, dtype=np.float64)
    slot_labels = np.asarray(slot_labels, dtype=np.int64)
    distinct = np.unique(slot_labels)
    denom = max(float(probs[distinct - 1].sum()), EPS_CONF)
    return probs[slot_labels - 1] / denom


def normalized_multimodal_confidences(probs, slot_labels) -> np.ndarray:
    """Batch version: probs [n, C] and slot_labels [n, M] -> [n, M]."""
    probs = np.asarray(probs, dtype=np.float64)
    slot_labels = np.asarray(slot_labels, dtype=np.int64)
    return np.stack([
        normalized_multimodal_confidence(probs[i], slot_labels[i])
        for i in range(slot_labels.shape[0])
    ]) if slot_labels.shape[0] else np.zeros_like(slot_labels, dtype=np.float64)


# ---------------------------------------------------------------------------
# Weak-modality weight dynamics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaState:
    """Per-modality loss weights 1 + steps·eta, floored at 1, at most one
    above 1. Integer step counts keep k consecutive unit signals at exactly
    1 + k·eta instead of drifting through repeated float addition."""

    steps: np.ndarray  # signed unit steps accumulated per modality, >= 0
    eta: float
    t: int = 0

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 + self.steps * self.eta

    @classmethod
    def initial(cls, num_modalities: int, eta: float) -> "AlphaState":
        if eta <= 0:
            raise ValueError("step size eta must be > 0")
        return cls(np.zeros(num_modalities, dtype=np.int64), eta, 0)

    def reset(self) -> "AlphaState":
        return AlphaState(np.zeros_like(self.steps), self.eta, self.t)


def alpha_update(state: AlphaState, c_tilde, multi_conf) -> AlphaState:
    """One signed step on the least confident modality's weight.

    The signal compares that modality's batch-mean unimodal confidence with
    the fused model's normalized confidence for the same labels: when the
    fused model under-credits the modality, its weight grows by eta. All
    other weights return to 1. An empty batch leaves the state unchanged.
    """
    c_tilde = np.asarray(c_tilde, dtype=np.float64)
    m_hat = least_confident_modality(c_tilde)
    if m_hat is None:
        return state
    multi_conf = np.asarray(multi_conf, dtype=np.float64)
    delta = int(np.sign(c_tilde[:, m_hat].mean() - multi_conf[:, m_hat].mean()))
    steps = np.zeros_like(state.steps)
    steps[m_hat] = max(0, state.steps[m_hat] + delta)
    return AlphaState(steps, state.eta, state.t + 1)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _onehot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise ValueError(f"labels must lie in [1, {num_classes}]")
    return np.eye(num_classes)[labels - 1]


def loss_mis(logits: Tensor, c_tilde, slot_labels, alpha, s_tilde) -> Tensor:
    """Per-sample misaligned loss [n].

    Soft cross-entropy against the confidence-weighted source labels, each
    label's share scaled by its modality's weak-modality weight, the whole
    loss scaled by 1 + (s+1)/2 in [1, 2].
    """
    c_tilde = np.asarray(c_tilde, dtype=np.float64)
    slot_labels = np.asarray(slot_labels, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.float64)
    s_tilde = np.asarray(s_tilde, dtype=np.float64)
    if np.any(alpha < 1.0):
        raise ValueError("weak-modality weights must be >= 1")
    if np.any((s_tilde < -1 - 1e-9) | (s_tilde > 1 + 1e-9)):
        raise ValueError("hard-sample weights must lie in [-1, 1]")
    n, m = slot_labels.shape
    num_classes = logits.values.shape[1]
    target = np.zeros((n, num_classes))
    weighted = (alpha[None, :] * c_tilde).reshape(-1)
    np.add.at(target, (np.repeat(np.arange(n), m), (slot_labels - 1).reshape(-1)),
              weighted)
    prefactor = 1.0 + (s_tilde + 1.0) / 2.0
    return ad.mul(ad.cross_entropy_soft(logits, target), prefactor)


def loss_align_uni(logits: Tensor, unimodal_logits: list[Tensor], labels):
    """Aligned per-sample losses: fused CE and the sum of unimodal CEs."""
    num_classes = logits.values.shape[1]
    onehot = _onehot(labels, num_classes)
    l_align = ad.cross_entropy_soft(logits, onehot)
    l_uni = ad.cross_entropy_soft(unimodal_logits[0], onehot)
    for z in unimodal_logits[1:]:
        l_uni = ad.add(l_uni, ad.cross_entropy_soft(z, onehot))
    return l_align, l_uni


def misaligned_anchor_weights(plan: MisalignedPlan) -> np.ndarray:
    """Per-sample weights that average each anchor's samples, then average
    anchors over the batch: w_k = 1 / (batch_size * n_samples(anchor_k))."""
    anchors = plan.anchors()
    counts = np.bincount(anchors, minlength=plan.batch_size)
    return 1.0 / (plan.batch_size * counts[anchors])


def total_loss(l_align: Tensor, l_uni: Tensor, l_mis: Tensor | None,
               plan: MisalignedPlan | None, lam: float) -> Tensor:
    """Batch objective: mean(l_align + l_uni) + lam * anchor-averaged l_mis.

    Anchors with no planned samples contribute zero to the misaligned term;
    lam = 0 reduces exactly to the aligned objective.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    aligned = ad.mean(ad.add(l_align, l_uni))
    if l_mis is None or plan is None or len(plan) == 0 or lam == 0.0:
        return aligned
    weights = lam * misaligned_anchor_weights(plan)
    return ad.add(aligned, ad.sum_all(ad.mul(l_mis, weights)))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    """Per-step diagnostics emitted by train(); nan marks quantities the
    phase does not produce (no misaligned batch, or warm-up)."""

    epoch: int
    step: int
    alpha: tuple[float, ...]
    uni_conf: tuple[float, ...]
    multi_conf: tuple[float, ...]
    loss_align: float
    loss_uni: float
    loss_mis: float
    loss_total: float


@dataclass
class TrainResult:
    model: MultimodalModel
    trace: list[TraceRow] = field(default_factory=list)
    alpha_state: AlphaState | None = None
    best_epoch: int | None = None


def _nan_tuple(m: int) -> tuple[float, ...]:
    return tuple([float("nan")] * m)


def _val_top1(model: MultimodalModel, dataset: FeatureDataset) -> float | None:
    """Validation top-1 on a frozen model, for best-epoch selection."""
    idx = dataset.split_indices("val")
    if idx.size == 0:
        return None
    feats = [Tensor(model.encode(m, dataset.features[m][idx]).values)
             for m in range(model.num_modalities)]
    logits = model.fuse_predict(feats).values
    preds = np.argmax(logits, axis=1) + 1
    return float(np.mean(preds == dataset.labels[idx]))


def train(cfg: ExperimentConfig, model: MultimodalModel,
          dataset: FeatureDataset) -> TrainResult:
    """Run the full schedule: warm-up epochs optimize only the unimodal
    pathway; main epochs add the fused and misaligned terms and update the
    weak-modality weight once per batch."""
    cfg = cfg.resolved()
    if cfg.warmup_epochs > cfg.epochs:
        raise ConfigError("warm-up cannot exceed total epochs")
    num_modalities = model.num_modalities
    num_classes = model.num_classes

    opt = SGD(model.parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    warmup_params = model.encoder_params() + model.unimodal_params()
    joint_params = model.encoder_params() + model.fusion_params()
    alpha_state = AlphaState.initial(num_modalities, cfg.eta)
    trace: list[TraceRow] = []
    step = 0
    best_acc, best_epoch, best_params = None, None, None

    for epoch in range(cfg.epochs):
        if cfg.lr_decay_epoch is not None and epoch >= cfg.lr_decay_epoch:
            opt.learning_rate = cfg.learning_rate * cfg.lr_decay
        warm = cfg.mode == "midas" and epoch < cfg.warmup_epochs
        if not warm and cfg.alpha_reset_per_epoch:
            alpha_state = alpha_state.reset()
        for batch in batch_iter(dataset, "train", cfg.batch_size, cfg.seed, epoch):
            step += 1
            xs = [dataset.features[m][batch] for m in range(num_modalities)]
            ys = dataset.labels[batch]
            onehot = _onehot(ys, num_classes)

            if cfg.mode == "joint":
                with Tape() as tape:
                    feats = [model.encode(m, x) for m, x in enumerate(xs)]
                    logits = model.fuse_predict(feats)
                    l_align = ad.cross_entropy_soft(logits, onehot)
                    objective = ad.mean(l_align)
                opt.zero_grad()
                tape.backward(objective)
                opt.step(joint_params)
                trace.append(TraceRow(
                    epoch, step, tuple(alpha_state.alpha),
                    _nan_tuple(num_modalities), _nan_tuple(num_modalities),
                    objective.item(), float("nan"), float("nan"), objective.item()))
                continue

            if warm:
                with Tape() as tape:
                    feats = [model.encode(m, x) for m, x in enumerate(xs)]
                    l_uni = None
                    for m, f in enumerate(feats):
                        term = ad.cross_entropy_soft(model.unimodal_predict(m, f), onehot)
                        l_uni = term if l_uni is None else ad.add(l_uni, term)
                    objective = ad.mean(l_uni)
                opt.zero_grad()
                tape.backward(objective)
                opt.step(warmup_params)
                trace.append(TraceRow(
                    epoch, step, tuple(alpha_state.alpha),
                    _nan_tuple(num_modalities), _nan_tuple(num_modalities),
                    float("nan"), objective.item(), float("nan"), objective.item()))
                continue

            # main phase
            pair_rng = np.random.default_rng([cfg.seed, 4, epoch, step])
            plan = pair_batch(ys, pair_rng, num_modalities)
            with Tape() as tape:
                feats, logits, uni_logits = model.forward_all(xs)
                l_align, l_uni = loss_align_uni(logits, uni_logits, ys)
                l_mis_vec = None
                if len(plan):
                    mis_feats = build_misaligned_features(feats, plan)
                    mis_logits = model.fuse_predict(mis_feats)
                    slot_sources = plan.slot_sources()
                    slot_labels = plan.slot_labels()
                    uni_probs = [ad.softmax_values(z.values) for z in uni_logits]
                    slot_probs = np.stack(
                        [uni_probs[m][slot_sources[:, m]] for m in range(num_modalities)],
                        axis=1)
                    c_tilde, _ = confidence_label(slot_probs, slot_labels, num_classes)
                    if cfg.hs:
                        s_tilde = hard_sample_weights([f.values for f in feats], plan)
                    else:
                        s_tilde = -np.ones(len(plan))
                    l_mis_vec = loss_mis(mis_logits, c_tilde, slot_labels,
                                         alpha_state.alpha, s_tilde)
                objective = total_loss(l_align, l_uni, l_mis_vec, plan, cfg.lam)
            opt.zero_grad()
            tape.backward(objective)
            opt.step()

            if len(plan):
                mis_probs = ad.softmax_values(mis_logits.values)
                multi_conf = normalized_multimodal_confidences(mis_probs, slot_labels)
                if cfg.wm:
                    alpha_state = alpha_update(alpha_state, c_tilde, multi_conf)
                uni_conf_mean = tuple(c_tilde.mean(axis=0))
                multi_conf_mean = tuple(multi_conf.mean(axis=0))
                mis_term = float(np.sum(
                    l_mis_vec.values * misaligned_anchor_weights(plan)))
            else:
                uni_conf_mean = _nan_tuple(num_modalities)
                multi_conf_mean = _nan_tuple(num_modalities)
                mis_term = 0.0
            trace.append(TraceRow(
                epoch, step, tuple(alpha_state.alpha),
                uni_conf_mean, multi_conf_mean,
                float(np.mean(l_align.values)), float(np.mean(l_uni.values)),
                mis_term, objective.item()))

        if cfg.select_best:
            acc = _val_top1(model, dataset)
            if acc is not None and (best_acc is None or acc > best_acc):
                best_acc, best_epoch = acc, epoch
                best_params = [p.values.copy() for p in model.parameters()]

    if best_params is not None:
        for p, saved in zip(model.parameters(), best_params):
            p.values[...] = saved

    return TrainResult(model, trace, alpha_state, best_epoch)
