from __future__ import annotations

import numpy as np
import pytest

from midas.config import ExperimentConfig
from midas.data import SyntheticSpec, generate_synthetic
from midas.model import EncoderSpec, MultimodalModel


def tiny_spec(seed: int = 0, **kwargs) -> SyntheticSpec:
    defaults = dict(num_classes=3, dims=(5, 4), separations=(2.0, 1.0),
                    noise_scales=(0.5, 0.5), n_train=48, n_val=24, n_test=12,
                    seed=seed)
    defaults.update(kwargs)
    return SyntheticSpec(**defaults)


def tiny_model(seed: int = 0, num_classes: int = 3, dims=(5, 4),
               hidden=(8,), feature_dim: int = 6) -> MultimodalModel:
    specs = [EncoderSpec(d, tuple(hidden), feature_dim) for d in dims]
    return MultimodalModel(specs, num_classes, seed=seed)


@pytest.fixture
def tiny_dataset():
    return generate_synthetic(tiny_spec())


@pytest.fixture
def tiny_cfg():
    return ExperimentConfig(synthetic=tiny_spec(), hidden=(8,), feature_dim=6,
                            batch_size=16, epochs=3, warmup_epochs=1,
                            seed=0, plots=False, select_best=False)


def finite_diff(f, arrays: list[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    """Central-difference gradient of scalar f() w.r.t. arrays mutated in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = f()
            flat[k] = orig - h
            f_minus = f()
            flat[k] = orig
            gflat[k] = (f_plus - f_minus) / (2 * h)
        grads.append(g)
    return grads
