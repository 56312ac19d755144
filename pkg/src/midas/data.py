"""Synthetic multimodal datasets, a binary feature-file format, and seeded
batch iteration.

Each synthetic modality is a Gaussian class-conditional cloud: class centers
are random unit directions scaled by a per-modality separation, and samples
add isotropic noise. The separation/noise ratio is the single knob that makes
a modality informative (dominant) or weak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_MAGIC = "MIDASFEAT"
SPLIT_TAGS = {"train": 0, "val": 1, "test": 2}


class FeatureFileError(RuntimeError):
    pass


class BadMagic(FeatureFileError):
    pass


class DimensionMismatch(FeatureFileError):
    pass


class TruncatedPayload(FeatureFileError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a class-conditional Gaussian multimodal dataset."""

    num_classes: int
    dims: tuple[int, ...]
    separations: tuple[float, ...]
    noise_scales: tuple[float, ...]
    n_train: int
    n_val: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        m = len(self.dims)
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if m < 2:
            raise ValueError("need at least two modalities")
        if len(self.separations) != m or len(self.noise_scales) != m:
            raise ValueError("separations and noise_scales must match dims")
        if any(d < 1 for d in self.dims):
            raise ValueError("feature dims must be >= 1")
        if any(s < 0 for s in self.separations):
            raise ValueError("separations must be >= 0")
        if any(s <= 0 for s in self.noise_scales):
            raise ValueError("noise scales must be > 0")
        if self.n_train < self.num_classes:
            raise ValueError("train split must cover every class")

    @property
    def num_modalities(self) -> int:
        return len(self.dims)


class FeatureDataset:
    """Per-sample per-modality feature vectors with 1-based integer labels
    and train/val/test split tags."""

    def __init__(self, features: list[np.ndarray], labels, split, num_classes: int):
        self.features = [np.ascontiguousarray(f, dtype=np.float64) for f in features]
        self.labels = np.asarray(labels, dtype=np.int64)
        self.split = np.asarray(split, dtype=np.uint8)
        self.num_classes = int(num_classes)
        n = self.labels.shape[0]
        if any(f.ndim != 2 or f.shape[0] != n for f in self.features):
            raise ValueError("every modality needs one row per sample")
        if self.split.shape != (n,):
            raise ValueError("split tags must match the sample count")
        if n and (self.labels.min() < 1 or self.labels.max() > self.num_classes):
            raise ValueError(f"labels must lie in [1, {self.num_classes}]")
        train_labels = set(self.labels[self.split == SPLIT_TAGS["train"]].tolist())
        if train_labels != set(range(1, self.num_classes + 1)):
            raise ValueError("train split must contain every class")

    @property
    def num_modalities(self) -> int:
        return len(self.features)

    @property
    def dims(self) -> list[int]:
        return [f.shape[1] for f in self.features]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def split_indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_TAGS[split])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureDataset)
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
            and len(self.features) == len(other.features)
            and all(np.array_equal(a, b) for a, b in zip(self.features, other.features))
        )


def _split_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    # Cycling through classes before shuffling keeps splits balanced and
    # guarantees class coverage whenever n >= num_classes.
    labels = (np.arange(n) % num_classes) + 1
    rng.shuffle(labels)
    return labels


def generate_synthetic(spec: SyntheticSpec) -> FeatureDataset:
    """Sample the dataset described by `spec`, bit-reproducibly in its seed."""
    rng = np.random.default_rng([spec.seed, 2])
    centers = []
    for m in range(spec.num_modalities):
        raw = rng.standard_normal((spec.num_classes, spec.dims[m]))
        unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        centers.append(unit * spec.separations[m])

    labels_parts, split_parts = [], []
    for name, count in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        labels_parts.append(_split_labels(count, spec.num_classes, rng))
        split_parts.append(np.full(count, SPLIT_TAGS[name], dtype=np.uint8))
    labels = np.concatenate(labels_parts)
    split = np.concatenate(split_parts)

    features = []
    for m in range(spec.num_modalities):
        noise = rng.standard_normal((labels.size, spec.dims[m]))
        features.append(centers[m][labels - 1] + spec.noise_scales[m] * noise)
    return FeatureDataset(features, labels, split, spec.num_classes)


def _record_dtype(dims: list[int]) -> np.dtype:
    return np.dtype([
        ("label", "<u4"),
        ("vec", "<f8", (int(sum(dims)),)),
        ("split", "u1"),
    ])


def save_feature_file(dataset: FeatureDataset, path) -> None:
    dims = dataset.dims
    header = " ".join([
        FEATURE_MAGIC, "1",
        str(dataset.num_modalities), str(dataset.num_classes),
        *[str(d) for d in dims],
        str(len(dataset)),
    ])
    records = np.zeros(len(dataset), dtype=_record_dtype(dims))
    records["label"] = dataset.labels
    records["vec"] = np.concatenate(dataset.features, axis=1)
    records["split"] = dataset.split
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(records.tobytes())


def load_feature_file(path) -> FeatureDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise BadMagic("feature file has no header line")
    tokens = blob[:nl].decode("ascii", errors="replace").split()
    if len(tokens) < 2 or tokens[0] != FEATURE_MAGIC or tokens[1] != "1":
        raise BadMagic(f"bad feature-file magic/version: {tokens[:2]}")
    try:
        n_modalities, num_classes = int(tokens[2]), int(tokens[3])
        dims = [int(t) for t in tokens[4:4 + n_modalities]]
        n_samples = int(tokens[4 + n_modalities])
    except (IndexError, ValueError) as exc:
        raise DimensionMismatch(f"malformed feature-file header: {tokens}") from exc
    if len(tokens) != 5 + n_modalities or len(dims) != n_modalities:
        raise DimensionMismatch(
            f"header declares {n_modalities} modalities but lists {len(tokens) - 5} dims"
        )

    dtype = _record_dtype(dims)
    payload = blob[nl + 1:]
    expected = n_samples * dtype.itemsize
    if len(payload) < expected:
        raise TruncatedPayload(
            f"payload holds {len(payload)} bytes, header needs {expected}"
        )
    if len(payload) > expected:
        raise FeatureFileError(
            f"payload holds {len(payload) - expected} trailing bytes"
        )
    records = np.frombuffer(payload, dtype=dtype)
    labels = records["label"].astype(np.int64)
    split = records["split"].copy()
    if n_samples and (labels.min() < 1 or labels.max() > num_classes):
        raise FeatureFileError(f"labels outside [1, {num_classes}]")
    if not np.isin(split, list(SPLIT_TAGS.values())).all():
        raise FeatureFileError("split tags must be 0, 1, or 2")
    flat = np.asarray(records["vec"], dtype=np.float64)
    bounds = np.cumsum(dims)[:-1]
    features = [np.ascontiguousarray(part) for part in np.split(flat, bounds, axis=1)]
    return FeatureDataset(features, labels, split, num_classes)


def batch_iter(dataset: FeatureDataset, split: str, batch_size: int,
               seed: int, epoch: int):
    """Yield index batches of one split, shuffled per (seed, epoch).

    The final short batch is kept, so each epoch visits the split exactly once.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    indices = dataset.split_indices(split)
    if indices.size == 0:
        return
    order = np.random.default_rng([seed, 3, epoch]).permutation(indices)
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]
