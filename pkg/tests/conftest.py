import numpy as np
import pytest
import torch

from relight.backbone import create_backbone

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def random_backbone():
    """Seeded randomly-initialized backbone: valid architecture and taps,
    no ImageNet semantics (pretrained weights are not available offline)."""
    return create_backbone("vgg19", weights="random", seed=7)


def random_image(rng, h=16, w=16, c=3):
    return rng.random((h, w, c))


@pytest.fixture
def make_image(rng):
    def _make(h=16, w=16, c=3):
        return random_image(rng, h, w, c)

    return _make
