import numpy as np
import pytest

from dronesr.imgcore import Image
from dronesr.synth import multiscale_texture


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def texture(h, w, seed=0, channels=3) -> Image:
    """Deterministic natural-looking test image."""
    return multiscale_texture(h, w, np.random.default_rng(seed), channels=channels)


@pytest.fixture
def tex():
    return texture
