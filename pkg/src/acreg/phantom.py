"""Synthetic tissue phantoms and ground-truth deformations for testing.

Phantoms are concentric deformed ellipsoids: a white-matter core wrapped in a
gray-matter shell a few voxels thick (a stand-in for cortex), a CSF rim, and
background outside. Radii are perturbed by smooth seeded noise so different
seeds give different anatomies while the shells stay nested.

Everything here is a deterministic function of the spec; the random stream is
``numpy.random.Generator(numpy.random.PCG64(seed))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidInputError
from .transform import DisplacementField, VelocityField, integrate_svf, warp_labels
from .volume import BACKGROUND, CSF, GRAY_MATTER, WHITE_MATTER, GridMeta, LabelVolume

GENERATOR_ID = "numpy.random.Generator(PCG64(seed))"

# tissue boundaries in normalized ellipsoid-radius units; the radius noise is
# strong and fairly short-waved on purpose: bumpy shells act like cortical
# folds and make tangential motion observable to a segmentation-driven metric
_WM_RADIUS = 0.60
_GM_THICKNESS_VOXELS = 3.0
_CSF_THICKNESS_VOXELS = 3.0
_RADIUS_NOISE = 0.12


@dataclass(frozen=True)
class PhantomSpec:
    """Size, seed, and deformation parameters of one synthetic instance."""

    size: int = 64
    seed: int = 0
    amplitude: float = 3.0
    sigma: float = 6.0

    def __post_init__(self):
        if int(self.size) < 32:
            raise InvalidInputError(f"phantom size must be >= 32, got {self.size}")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise InvalidInputError(f"amplitude must be >= 0, got {self.amplitude}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise InvalidInputError(f"sigma must be > 0, got {self.sigma}")
        object.__setattr__(self, "size", int(self.size))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def meta(self):
        return GridMeta((self.size,) * 3)


def _smooth_noise(rng, shape, sigma):
    noise = rng.standard_normal(shape)
    smooth = gaussian_filter(noise, sigma, mode="constant", cval=0.0)
    peak = np.abs(smooth).max()
    return smooth / peak if peak > 0 else smooth


def make_phantom_labels(spec: PhantomSpec) -> LabelVolume:
    """Concentric WM/GM/CSF/BG phantom with seed-dependent boundary warps."""
    n = spec.size
    rng = np.random.default_rng(spec.seed)
    center = (n - 1) / 2.0
    semi_axes = np.array([0.42, 0.38, 0.34]) * n

    coords = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64)] * 3, indexing="ij"), axis=-1)
    rel = (coords - center) / semi_axes
    radius = np.sqrt((rel * rel).sum(axis=-1))

    # one shared perturbation keeps the shells nested
    radius = radius + _RADIUS_NOISE * _smooth_noise(rng, (n, n, n), n / 16.0)

    mean_axis = float(semi_axes.mean())
    r_wm = _WM_RADIUS
    r_gm = r_wm + _GM_THICKNESS_VOXELS / mean_axis
    r_csf = r_gm + _CSF_THICKNESS_VOXELS / mean_axis

    labels = np.full((n, n, n), BACKGROUND, dtype=np.uint8)
    labels[radius < r_csf] = CSF
    labels[radius < r_gm] = GRAY_MATTER
    labels[radius < r_wm] = WHITE_MATTER
    return LabelVolume(spec.meta, labels)


def make_synthetic_svf(spec: PhantomSpec) -> VelocityField:
    """Smooth random velocity with max vector norm ``amplitude`` (voxels).

    White noise per component is Gaussian-smoothed with ``sigma`` voxels,
    rescaled, and zeroed within two voxels of the volume boundary.
    """
    n = spec.size
    rng = np.random.default_rng(spec.seed)
    v = rng.standard_normal((n, n, n, 3))
    for c in range(3):
        v[..., c] = gaussian_filter(v[..., c], spec.sigma, mode="constant", cval=0.0)
    norms = np.sqrt((v * v).sum(axis=-1))
    peak = norms.max()
    if peak > 0 and spec.amplitude > 0:
        v *= spec.amplitude / peak
    else:
        v[:] = 0.0
    v[:2] = 0.0
    v[-2:] = 0.0
    v[:, :2] = 0.0
    v[:, -2:] = 0.0
    v[:, :, :2] = 0.0
    v[:, :, -2:] = 0.0
    return VelocityField(spec.meta, v)


def make_pair(spec: PhantomSpec, squaring_steps: int = 7):
    """Phantom pair with known deformation: ``(moving, fixed, truth)``.

    The fixed image is the phantom itself and the moving one is the fixed
    image warped by ``truth``, so an estimated moving-to-fixed field should
    approximately invert ``truth``: ``compose(estimated, truth)`` is close to
    the identity.
    """
    fixed = make_phantom_labels(spec)
    truth = integrate_svf(make_synthetic_svf(spec), squaring_steps)
    moving = warp_labels(fixed, truth)
    return moving, fixed, truth
