"""Backend equivalence: the compiled kernels must match the numpy fallback."""

import numpy as np
import pytest

from srprom import _kernels
from srprom.model import StructuringElement

BACKENDS = _kernels.available_backends()

needs_both = pytest.mark.skipif(
    "cython" not in BACKENDS, reason="compiled kernel backend not built"
)


@needs_both
def test_morphology_backends_agree(rng):
    np_b = BACKENDS["numpy"]
    cy_b = BACKENDS["cython"]
    for _ in range(30):
        mask = rng.random((33, 29)) > rng.uniform(0.3, 0.7)
        se = (
            StructuringElement.disk(int(rng.integers(1, 12)))
            if rng.random() < 0.5
            else StructuringElement.square(int(rng.integers(1, 9)))
        )
        dy = np.ascontiguousarray(se.offsets[:, 0])
        dx = np.ascontiguousarray(se.offsets[:, 1])
        assert (np_b.binary_erode(mask, dy, dx) == cy_b.binary_erode(mask, dy, dx)).all()
        assert (np_b.binary_dilate(mask, dy, dx) == cy_b.binary_dilate(mask, dy, dx)).all()


@needs_both
def test_labeling_backends_agree(rng):
    np_b = BACKENDS["numpy"]
    cy_b = BACKENDS["cython"]
    for _ in range(30):
        mask = rng.random((40, 24)) > 0.6
        labels_np, count_np = np_b.label_components(mask)
        labels_cy, count_cy = cy_b.label_components(mask)
        assert count_np == count_cy
        assert (labels_np == labels_cy).all()


@needs_both
def test_convolution_backends_agree(rng):
    np_b = BACKENDS["numpy"]
    cy_b = BACKENDS["cython"]
    for _ in range(10):
        m = int(rng.integers(1, 6)) * 2 + 1
        padded = rng.normal(size=(20 + m - 1, 17 + m - 1))
        kernel = rng.normal(size=m)
        a = np_b.convolve_sep_valid(padded, kernel)
        b = cy_b.convolve_sep_valid(padded, kernel)
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_forced_backend_env(monkeypatch):
    # the active backend is one of the available ones
    assert _kernels.BACKEND in BACKENDS
