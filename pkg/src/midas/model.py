"""Multimodal classifier: per-modality MLP encoders shared by a concatenation
fusion head and by per-modality unimodal heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = "MIDAS1"


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file cannot be parsed or does not fit."""


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of one modality encoder: input -> hidden... -> feature."""

    input_dim: int
    hidden: tuple[int, ...] = (32,)
    feature_dim: int = 16

    def __post_init__(self):
        widths = (self.input_dim, *self.hidden, self.feature_dim)
        if any(w < 1 for w in widths):
            raise ValueError(f"encoder widths must be >= 1, got {widths}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = (self.input_dim, *self.hidden, self.feature_dim)
        return list(zip(widths[:-1], widths[1:]))


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, (in_dim, out_dim)),
                             requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MultimodalModel:
    """M encoders feeding a fusion head over concatenated features plus M
    unimodal heads. Encoder outputs are computed once per batch and reused by
    both pathways."""

    def __init__(self, encoder_specs: list[EncoderSpec], num_classes: int,
                 seed: int = 0):
        if len(encoder_specs) < 2:
            raise ValueError("need at least two modalities")
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.encoder_specs = list(encoder_specs)
        self.num_classes = num_classes
        rng = np.random.default_rng([seed, 1])
        self.encoders = [
            [Linear(din, dout, rng) for din, dout in spec.layer_dims]
            for spec in self.encoder_specs
        ]
        total_features = sum(s.feature_dim for s in self.encoder_specs)
        self.fusion = Linear(total_features, num_classes, rng)
        self.unimodal = [Linear(s.feature_dim, num_classes, rng)
                         for s in self.encoder_specs]

    @property
    def num_modalities(self) -> int:
        return len(self.encoder_specs)

    @property
    def input_dims(self) -> list[int]:
        return [s.input_dim for s in self.encoder_specs]

    @property
    def feature_dims(self) -> list[int]:
        return [s.feature_dim for s in self.encoder_specs]

    # -- parameter registry -------------------------------------------------

    def encoder_params(self) -> list[Tensor]:
        return [p for layers in self.encoders for lin in layers for p in lin.params]

    def fusion_params(self) -> list[Tensor]:
        return self.fusion.params

    def unimodal_params(self) -> list[Tensor]:
        return [p for lin in self.unimodal for p in lin.params]

    def parameters(self) -> list[Tensor]:
        return self.encoder_params() + self.fusion_params() + self.unimodal_params()

    # -- forward passes -----------------------------------------------------

    def encode(self, m: int, x) -> Tensor:
        """Features of modality m, a ReLU MLP applied to [b, input_dim_m]."""
        if not 0 <= m < self.num_modalities:
            raise IndexError(f"modality index {m} out of range [0, {self.num_modalities})")
        x = ad.as_tensor(x)
        expected = self.encoder_specs[m].input_dim
        if x.values.ndim != 2 or x.values.shape[1] != expected:
            raise ValueError(
                f"modality {m} expects [b, {expected}] inputs, got {x.values.shape}"
            )
        h = x
        layers = self.encoders[m]
        for lin in layers[:-1]:
            h = ad.relu(lin(h))
        return layers[-1](h)

    def fuse_predict(self, features: list[Tensor]) -> Tensor:
        """Fused logits from per-modality features, concatenated in modality order."""
        if len(features) != self.num_modalities:
            raise ValueError(
                f"expected {self.num_modalities} feature blocks, got {len(features)}"
            )
        for m, (f, spec) in enumerate(zip(features, self.encoder_specs)):
            f = ad.as_tensor(f)
            if f.values.shape[1] != spec.feature_dim:
                raise ValueError(
                    f"modality {m} feature width {f.values.shape[1]} != {spec.feature_dim}"
                )
        return self.fusion(ad.concat(features, axis=1))

    def unimodal_predict(self, m: int, f) -> Tensor:
        """Unimodal logits of head m applied to [b, feature_dim_m] features."""
        f = ad.as_tensor(f)
        expected = self.encoder_specs[m].feature_dim
        if f.values.shape[1] != expected:
            raise ValueError(
                f"unimodal head {m} expects width {expected}, got {f.values.shape[1]}"
            )
        return self.unimodal[m](f)

    def forward_all(self, xs: list) -> tuple[list[Tensor], Tensor, list[Tensor]]:
        """Single shared forward: (features, fused logits, unimodal logits).

        The identical feature tensors feed both heads, so the shared-encoder
        pathway sees bit-identical inputs.
        """
        feats = [self.encode(m, x) for m, x in enumerate(xs)]
        return feats, self.fuse_predict(feats), [
            self.unimodal_predict(m, f) for m, f in enumerate(feats)
        ]


# ---------------------------------------------------------------------------
# Checkpoint format: ascii header, then parameters as little-endian float64
# in registry order (encoders, fusion head, unimodal heads).
# ---------------------------------------------------------------------------

def save_checkpoint(model: MultimodalModel, path) -> None:
    lines = [f"{CHECKPOINT_MAGIC} {model.num_modalities} {model.num_classes}"]
    for spec in model.encoder_specs:
        widths = " ".join(str(w) for w in (spec.input_dim, *spec.hidden, spec.feature_dim))
        lines.append(f"encoder {widths}")
    flat = np.concatenate([p.values.reshape(-1) for p in model.parameters()])
    lines.append(f"params {flat.size}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> MultimodalModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = 0
    lines = []
    # Header is newline-terminated ascii; payload follows the "params" line.
    view = blob
    while True:
        nl = view.find(b"\n", header_end)
        if nl < 0:
            raise CheckpointError("checkpoint header is not terminated")
        line = view[header_end:nl].decode("ascii", errors="replace")
        lines.append(line)
        header_end = nl + 1
        if line.startswith("params "):
            break

    head = lines[0].split()
    if len(head) != 3 or head[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic: {lines[0]!r}")
    n_modalities, num_classes = int(head[1]), int(head[2])
    enc_lines = lines[1:-1]
    if len(enc_lines) != n_modalities:
        raise CheckpointError(
            f"expected {n_modalities} encoder lines, found {len(enc_lines)}"
        )
    specs = []
    for line in enc_lines:
        parts = line.split()
        if parts[0] != "encoder" or len(parts) < 3:
            raise CheckpointError(f"malformed encoder line: {line!r}")
        widths = [int(w) for w in parts[1:]]
        specs.append(EncoderSpec(widths[0], tuple(widths[1:-1]), widths[-1]))

    declared = int(lines[-1].split()[1])
    payload = blob[header_end:]
    if len(payload) != declared * 8:
        raise CheckpointError(
            f"checkpoint payload holds {len(payload) // 8} values, header declares {declared}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)

    model = MultimodalModel(specs, num_classes, seed=0)
    needed = sum(p.values.size for p in model.parameters())
    if flat.size != needed:
        raise CheckpointError(
            f"checkpoint declares {flat.size} values, model needs {needed}"
        )
    offset = 0
    for p in model.parameters():
        n = p.values.size
        p.values[...] = flat[offset:offset + n].reshape(p.values.shape)
        offset += n
    return model
