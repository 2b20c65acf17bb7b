"""Input-validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import GridMismatchError, InvalidInputError
from .transform import DisplacementField, VelocityField
from .volume import GridMeta, LabelVolume, ScalarVolume

__all__ = ["as_label_volume", "as_scalar_volume", "check_matching_grids"]


def as_label_volume(data, spacing=(1.0, 1.0, 1.0)) -> LabelVolume:
    """Coerce an integer array (or pass through a LabelVolume)."""
    if isinstance(data, LabelVolume):
        return data
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise InvalidInputError(f"label data must be a 3D array, got shape {arr.shape}")
    return LabelVolume(GridMeta(arr.shape, spacing), arr)


def as_scalar_volume(data, spacing=(1.0, 1.0, 1.0)) -> ScalarVolume:
    """Coerce a real-valued array (or pass through a ScalarVolume)."""
    if isinstance(data, ScalarVolume):
        return data
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidInputError(f"volume data must be a 3D array, got shape {arr.shape}")
    return ScalarVolume(GridMeta(arr.shape, spacing), arr)


def check_matching_grids(reference, *others):
    """Raise GridMismatchError unless every object shares the reference grid."""
    for other in others:
        if other.meta.dims != reference.meta.dims:
            raise GridMismatchError(
                f"grids differ: {other.meta.dims} vs {reference.meta.dims}")
    return reference.meta


def field_like(obj):
    """True for the deformation/velocity field types."""
    return isinstance(obj, (DisplacementField, VelocityField))
