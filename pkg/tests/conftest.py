import numpy as np
import pytest

from hiergraph.tensor_io import validate_label_map


def voronoi_labels(rng: np.random.Generator, h: int, w: int, n: int) -> np.ndarray:
    """Random contiguous label map: nearest-seed assignment over the grid."""
    flat = rng.choice(h * w, size=n, replace=False)
    sy, sx = np.divmod(flat, w)
    ys, xs = np.mgrid[0:h, 0:w]
    d = (ys[..., None] - sy) ** 2 + (xs[..., None] - sx) ** 2
    return np.argmin(d, axis=2).astype(np.int32)


def random_superpixels(rng: np.random.Generator, h: int, w: int, n: int):
    return validate_label_map(voronoi_labels(rng, h, w, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quad_sp():
    labels = np.zeros((8, 8), np.int32)
    labels[:4, 4:] = 1
    labels[4:, :4] = 2
    labels[4:, 4:] = 3
    return validate_label_map(labels)
