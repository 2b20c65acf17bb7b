import numpy as np
import pytest

from acreg.transform import VelocityField
from acreg.volume import GridMeta, LabelVolume, one_hot_soft


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sine_velocity(size, seed, amplitude, max_mode=2):
    """Bandlimited random velocity, zero near the faces and very smooth.

    Low-order sine products keep the trilinear discretization error of both
    integrators far below the tolerances under test; Gaussian-noise fields of
    comparable amplitude are too curved for that on small grids.
    """
    rng = np.random.default_rng(seed)
    x = (np.arange(size) + 1.0) / (size + 1.0)
    modes = [np.sin(np.pi * k * x) for k in range(1, max_mode + 1)]
    v = np.zeros((size, size, size, 3))
    for c in range(3):
        for mx in modes:
            for my in modes:
                for mz in modes:
                    v[..., c] += rng.normal() * mx[:, None, None] * my[None, :, None] * mz[None, None, :]
    peak = np.linalg.norm(v, axis=3).max()
    if peak > 0:
        v *= amplitude / peak
    return VelocityField(GridMeta((size,) * 3), v)


def random_labels(rng, dims, spacing=(1.0, 1.0, 1.0)):
    """Label volume with rich texture (variance in every NCC window)."""
    return LabelVolume(GridMeta(dims, spacing), rng.integers(0, 4, size=dims))


def smooth_random_labels(rng, dims, blobs=25):
    """Blobby label volume, more anatomical than pure noise."""
    field = np.zeros(dims)
    for _ in range(blobs):
        center = rng.uniform(0, np.array(dims) - 1)
        width = rng.uniform(2.0, max(dims) / 3.0)
        grids = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
        d2 = sum((g - c) ** 2 for g, c in zip(grids, center))
        field += rng.normal() * np.exp(-d2 / (2 * width ** 2))
    edges = np.quantile(field, [0.25, 0.5, 0.75])
    labels = np.digitize(field, edges)
    return LabelVolume(GridMeta(dims), labels)


def soft_pair(rng, dims, sigma=1.0):
    a = random_labels(rng, dims)
    b = random_labels(rng, dims)
    return one_hot_soft(a, sigma), one_hot_soft(b, sigma), a, b
