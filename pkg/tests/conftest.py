import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from srprom.model import ImageBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def rand_image(rng, h, w, c=3):
    return ImageBuffer(rng.random((h, w, c)))
