import logging

import numpy as np
import pytest

from resfgb.dataio import Dataset


@pytest.fixture(autouse=True)
def _quiet_guard_warnings():
    # the learning-rate guard warning is expected at the default step sizes
    logging.getLogger("resfgb.boost").setLevel(logging.ERROR)
    yield
    logging.getLogger("resfgb.boost").setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def truncated_blobs(n, seed, sigma=1.0, center=3.0, radius=2.0, label_values=(0, 1)):
    """Two 2-D Gaussian blobs at (+-center*sigma, 0), truncated to radius*sigma.

    With the defaults the discs are separated by a gap of 2 sigma.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k, sign in enumerate((-1.0, 1.0)):
        pts = []
        while len(pts) < n // 2 + (k * (n % 2)):
            p = rng.normal(scale=sigma, size=2)
            if np.linalg.norm(p) <= radius * sigma:
                pts.append(p + [sign * center * sigma, 0.0])
        out.append(np.array(pts))
    X = np.vstack(out)
    y = np.r_[np.zeros(len(out[0]), int), np.ones(len(out[1]), int)]
    return Dataset(X, y, label_values)


def random_dataset(rng, n, d, c):
    X = rng.normal(size=(n, d))
    y = rng.integers(0, c, size=n)
    y[:c] = np.arange(c)  # every class present
    return Dataset(X, y, tuple(range(c)))


@pytest.fixture
def blobs():
    return truncated_blobs(200, seed=0)
