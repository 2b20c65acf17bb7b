"""Evaluation metrics: localized NCC, Dice overlap, folding ratio, J stats."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from types import MappingProxyType

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import InvalidInputError, UndefinedMetricError
from .transform import DisplacementField, jacobian_determinant
from .volume import (
    LabelVolume,
    ScalarVolume,
    SoftTissueMap,
    TISSUE_LABELS,
    check_same_grid,
)

NCC_EPSILON = 1e-5


def _box_sum(arr, window):
    # Zero-padded box sum; with the matching count map this yields window
    # statistics truncated at the volume borders.
    return uniform_filter(arr, size=window, mode="constant", cval=0.0) * float(window ** 3)


@lru_cache(maxsize=32)
def _count_map(shape, window):
    counts = _box_sum(np.ones(shape), window)
    counts.flags.writeable = False
    return counts


def _check_window(window):
    if int(window) != window or window < 3 or window % 2 == 0:
        raise InvalidInputError(f"NCC window must be an odd integer >= 3, got {window}")
    return int(window)


def _cc_map(a, b, window):
    """Per-voxel squared local correlation of two arrays, in [0, 1]."""
    n = _count_map(a.shape, window)
    s1 = _box_sum(a, window)
    s2 = _box_sum(b, window)
    cross = _box_sum(a * b, window) - s1 * s2 / n
    var_a = np.maximum(_box_sum(a * a, window) - s1 * s1 / n, 0.0)
    var_b = np.maximum(_box_sum(b * b, window) - s2 * s2 / n, 0.0)
    return cross * cross / (var_a * var_b + NCC_EPSILON)


def _channel_arrays(vol):
    if isinstance(vol, SoftTissueMap):
        return [vol.channels[..., c] for c in range(vol.channels.shape[3])]
    return [vol.values]


def local_ncc(a, b, window: int = 9) -> float:
    """Mean localized squared normalized cross-correlation, in [0, 1].

    ``a`` and ``b`` are ScalarVolumes or SoftTissueMaps on one grid; for soft
    maps the value is additionally averaged over the four channels. Windows
    are truncated at the volume borders.
    """
    window = _check_window(window)
    check_same_grid(a, b, "NCC inputs")
    ch_a, ch_b = _channel_arrays(a), _channel_arrays(b)
    if len(ch_a) != len(ch_b):
        raise InvalidInputError("NCC inputs must have the same number of channels")
    return float(np.mean([_cc_map(x, y, window).mean() for x, y in zip(ch_a, ch_b)]))


def dice(a: LabelVolume, b: LabelVolume, label: int) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|) of one label's supports."""
    check_same_grid(a, b, "label volumes")
    mask_a = a.labels == label
    mask_b = b.labels == label
    denom = int(mask_a.sum()) + int(mask_b.sum())
    if denom == 0:
        raise UndefinedMetricError(f"label {label} absent from both volumes")
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / denom


def mean_tissue_dice(a: LabelVolume, b: LabelVolume) -> float:
    """Mean of the GM and WM Dice coefficients."""
    from .volume import GRAY_MATTER, WHITE_MATTER

    return 0.5 * (dice(a, b, GRAY_MATTER) + dice(a, b, WHITE_MATTER))


def rfp(phi: DisplacementField) -> float:
    """Ratio of folding points: percent of voxels with negative Jacobian."""
    j = jacobian_determinant(phi)
    return 100.0 * float(np.count_nonzero(j.values < 0.0)) / phi.meta.n_voxels


@dataclass(frozen=True)
class RegionStats:
    min: float
    mean: float
    count: int


@dataclass(frozen=True)
class TissueJacobianStats:
    """Min/mean Jacobian determinant per tissue label present in the volume."""

    regions: dict

    def __post_init__(self):
        object.__setattr__(self, "regions", MappingProxyType(dict(self.regions)))

    def __getitem__(self, label):
        return self.regions[label]

    def __contains__(self, label):
        return label in self.regions


def tissue_jacobian_stats(j: ScalarVolume, labels: LabelVolume) -> TissueJacobianStats:
    """Min and mean of J over each tissue's voxels; empty tissues are omitted."""
    check_same_grid(j, labels, "Jacobian map and labels")
    regions = {}
    for label in TISSUE_LABELS:
        values = j.values[labels.labels == label]
        if values.size:
            regions[label] = RegionStats(float(values.min()), float(values.mean()), int(values.size))
    return TissueJacobianStats(regions)
