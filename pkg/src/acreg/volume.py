"""3D grid containers plus the sampling and encoding primitives built on them.

Conventions
-----------
Arrays are indexed ``[i, j, k]`` along the (x, y, z) axes. Continuous
coordinates and displacements are expressed in voxel units of the grid;
physical spacing only enters Jacobian finite differences. Out-of-range
coordinates are clamped to the grid boundary per axis (replicate edge).
All containers are immutable after construction and every operation here
is a pure function, so concurrent use on shared inputs is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import _interp
from .errors import GridMismatchError, InvalidInputError

BACKGROUND, CSF, GRAY_MATTER, WHITE_MATTER = 0, 1, 2, 3
TISSUE_LABELS = (BACKGROUND, CSF, GRAY_MATTER, WHITE_MATTER)
TISSUE_NAMES = {BACKGROUND: "bg", CSF: "csf", GRAY_MATTER: "gm", WHITE_MATTER: "wm"}
N_TISSUES = len(TISSUE_LABELS)

SOFT_SUM_TOL = 1e-4


def _freeze(arr):
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class GridMeta:
    """Voxel counts and physical spacing (mm per voxel) of a 3D grid."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise InvalidInputError(f"grid dims must be three values >= 1, got {self.dims}")
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise InvalidInputError(f"grid spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def n_voxels(self):
        nx, ny, nz = self.dims
        return nx * ny * nz


def check_same_grid(a, b, what="operands"):
    """Raise GridMismatchError unless both objects share one grid."""
    if a.meta.dims != b.meta.dims:
        raise GridMismatchError(f"{what} on different grids: {a.meta.dims} vs {b.meta.dims}")


@dataclass(frozen=True)
class ScalarVolume:
    """One finite real value per voxel."""

    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != self.meta.dims:
            raise GridMismatchError(f"values shape {arr.shape} does not match dims {self.meta.dims}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("scalar volume contains non-finite values")
        object.__setattr__(self, "values", _freeze(arr))


@dataclass(frozen=True)
class LabelVolume:
    """Tissue segmentation map with labels BG=0, CSF=1, GM=2, WM=3."""

    meta: GridMeta
    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.shape != self.meta.dims:
            raise GridMismatchError(f"labels shape {arr.shape} does not match dims {self.meta.dims}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise InvalidInputError("labels must be integers")
        arr = arr.astype(np.uint8, copy=True) if arr.dtype != np.uint8 else arr
        if arr.size and arr.max() > WHITE_MATTER:
            raise InvalidInputError(
                f"labels outside {{0..3}} present (max {int(arr.max())})")
        object.__setattr__(self, "labels", _freeze(arr))

    def mask(self, label):
        return self.labels == label

    def present_labels(self):
        return tuple(int(v) for v in np.unique(self.labels))


@dataclass(frozen=True)
class SoftTissueMap:
    """Continuous 4-channel encoding, one channel per tissue label.

    Channels live in [0, 1] and sum to 1 at every voxel (within tolerance),
    stored channel-last as ``channels[i, j, k, c]``.
    """

    meta: GridMeta
    channels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.channels, dtype=np.float64)
        if arr.shape != self.meta.dims + (N_TISSUES,):
            raise GridMismatchError(
                f"channels shape {arr.shape} does not match dims {self.meta.dims} x {N_TISSUES}")
        if arr.min() < -SOFT_SUM_TOL or arr.max() > 1.0 + SOFT_SUM_TOL:
            raise InvalidInputError("soft map channels must lie in [0, 1]")
        sums = arr.sum(axis=3)
        if np.abs(sums - 1.0).max() > SOFT_SUM_TOL:
            raise InvalidInputError("soft map channels must sum to 1 per voxel")
        object.__setattr__(self, "channels", _freeze(arr))

    def channel(self, label):
        return ScalarVolume(self.meta, self.channels[..., label].copy())


def _check_point(p):
    pt = np.asarray(p, dtype=np.float64).reshape(-1)
    if pt.shape != (3,) or not np.all(np.isfinite(pt)):
        raise InvalidInputError(f"sampling point must be three finite coordinates, got {p!r}")
    return pt


def check_sampleable(meta, what="volume"):
    """Interpolation needs at least two voxels per axis."""
    if min(meta.dims) < 2:
        raise InvalidInputError(f"{what} with dims {meta.dims} cannot be sampled (need >= 2 per axis)")


def sample_trilinear(vol: ScalarVolume, p) -> float:
    """Trilinear interpolation of the 8 voxels around ``p`` (voxel coords)."""
    pt = _check_point(p)
    check_sampleable(vol.meta)
    out = np.empty((1, 1))
    _interp.sample_pts(vol.values.reshape(vol.meta.dims + (1,)), pt.reshape(1, 3), out)
    return float(out[0, 0])


def sample_nearest(labels: LabelVolume, p) -> int:
    """Label at the nearest voxel to ``p`` (round half up, clamped)."""
    pt = _check_point(p)
    out = np.empty(1, dtype=np.uint8)
    _interp.sample_nearest_pts(labels.labels, pt.reshape(1, 3), out)
    return int(out[0])


def _border_renormalized_gaussian(arr, sigma):
    # Truncate at 3 sigma; divide by the smoothed indicator so border kernels
    # renormalize instead of borrowing zeros from outside the volume.
    blurred = gaussian_filter(arr, sigma, mode="constant", cval=0.0, truncate=3.0)
    norm = gaussian_filter(np.ones_like(arr), sigma, mode="constant", cval=0.0, truncate=3.0)
    return blurred / norm


def one_hot_soft(labels: LabelVolume, sigma: float = 1.0) -> SoftTissueMap:
    """Per-label indicators blurred by an isotropic Gaussian of ``sigma`` voxels.

    ``sigma=0`` yields the hard one-hot encoding. Channels are renormalized
    per voxel so they sum to exactly 1.
    """
    if not np.isfinite(sigma) or sigma < 0:
        raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
    channels = np.empty(labels.meta.dims + (N_TISSUES,), dtype=np.float64)
    for lab in TISSUE_LABELS:
        indicator = (labels.labels == lab).astype(np.float64)
        channels[..., lab] = indicator if sigma == 0 else _border_renormalized_gaussian(indicator, sigma)
    channels /= channels.sum(axis=3, keepdims=True)
    return SoftTissueMap(labels.meta, channels)


def _block_reduce_mean(arr, factor):
    # Partial blocks at the far edge average over the voxels they actually
    # contain (ceil division on the output dims).
    out = arr
    for axis in range(3):
        n = out.shape[axis]
        edges = np.arange(0, n, factor)
        counts = np.diff(np.append(edges, n)).astype(np.float64)
        shape = [1, 1, 1]
        shape[axis] = len(edges)
        out = np.add.reduceat(out, edges, axis=axis) / counts.reshape(shape)
    return out


def resample_level(vol: ScalarVolume, factor: int) -> ScalarVolume:
    """Downsample by block averaging over ``factor**3`` blocks."""
    if int(factor) != factor or factor < 1:
        raise InvalidInputError(f"resample factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return vol
    values = _block_reduce_mean(vol.values, factor)
    dims = values.shape
    spacing = tuple(s * factor for s in vol.meta.spacing)
    return ScalarVolume(GridMeta(dims, spacing), values)
