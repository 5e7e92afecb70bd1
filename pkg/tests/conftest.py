"""Shared fixtures: small pretrained backbones reused across test modules.

Training happens once per session; tests treat the resulting models as
frozen. Keep these configs small so the full suite stays fast.
"""

import numpy as np
import pytest

from pfnkit.data import from_arrays
from pfnkit.model import PfnConfig, PfnModel, pretrain
from pfnkit.prior import PriorConfig, task_stream

SMALL_CFG = PfnConfig(e=32, layers=2, heads=4, ff_mult=2, d_max=6, c_max=6,
                      n_ctx_max=1024)


@pytest.fixture(scope="session")
def small_model():
    """A lightly pretrained backbone over a mixed prior; good enough to make
    separable tasks learnable by a prompt."""
    prior = PriorConfig(d_max=6, c_max=6, n_total=96,
                        feature_count_range=(2, 4), class_count_range=(2, 3),
                        kind_weights=(0.2, 0.4, 0.4))
    model = PfnModel(SMALL_CFG, seed=1)
    pretrain(model, task_stream(prior, 3), steps=600, lr=3e-4, seed=3)
    return model


def make_blobs(seed=0, n=400, centers=((-2.5, -2.5), (2.5, 2.5)), spread=1.0,
               name=None):
    rng = np.random.default_rng(seed)
    k = len(centers)
    y = rng.integers(0, k, n)
    x = np.asarray(centers, dtype=float)[y] + spread * rng.standard_normal((n, 2))
    return from_arrays(name or f"blobs-{seed}", x, y, seed=seed)


@pytest.fixture()
def blob_dataset():
    return make_blobs(seed=5)
