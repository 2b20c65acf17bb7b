"""Deformation algebra: warping, composition, flow integration, Jacobians.

A deformation is stored as a per-voxel displacement ``u`` in voxel units with
``phi(x) = x + u(x)``. Composition follows ``compose(phi1, phi2)(x) =
phi1(phi2(x))``, so warping a volume by the composed field equals warping it
by ``phi1`` first and by ``phi2`` second. This is the opposite of the
"apply phi1 last" convention used by some toolkits; tests pin it down.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _interp
from .errors import GridMismatchError, InvalidInputError
from .volume import (
    GridMeta,
    LabelVolume,
    ScalarVolume,
    SoftTissueMap,
    check_same_grid,
    check_sampleable,
)


def _field_array(meta, data, what):
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape != meta.dims + (3,):
        raise GridMismatchError(f"{what} shape {arr.shape} does not match dims {meta.dims} x 3")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contains non-finite components")
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class DisplacementField:
    """Deformation phi(x) = x + u(x), components in voxel units."""

    meta: GridMeta
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _field_array(self.meta, self.u, "displacement field"))


@dataclass(frozen=True)
class VelocityField:
    """Stationary velocity whose unit-time flow yields a deformation."""

    meta: GridMeta
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", _field_array(self.meta, self.v, "velocity field"))

    def scaled(self, factor):
        return VelocityField(self.meta, self.v * factor)


def zero_displacement(meta: GridMeta) -> DisplacementField:
    return DisplacementField(meta, np.zeros(meta.dims + (3,)))


@lru_cache(maxsize=8)
def _grid_points(dims):
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    pts.flags.writeable = False
    return pts


def _warp_channels(values, u):
    # values: (nx, ny, nz, C); u: (nx, ny, nz, 3) -> warped (nx, ny, nz, C)
    out = np.empty_like(values)
    _interp.warp(np.ascontiguousarray(values), np.ascontiguousarray(u), out)
    return out


def warp_scalar(vol: ScalarVolume, phi: DisplacementField) -> ScalarVolume:
    """Resample ``vol`` at phi(x) = x + u(x) with trilinear interpolation."""
    check_same_grid(vol, phi, "volume and field")
    check_sampleable(vol.meta)
    warped = _warp_channels(vol.values[..., None], phi.u)
    return ScalarVolume(vol.meta, warped[..., 0])


def warp_soft(soft: SoftTissueMap, phi: DisplacementField) -> SoftTissueMap:
    """Warp all four soft channels by one field (channels renormalized)."""
    check_same_grid(soft, phi, "soft map and field")
    check_sampleable(soft.meta)
    warped = _warp_channels(soft.channels, phi.u)
    warped /= warped.sum(axis=3, keepdims=True)
    return SoftTissueMap(soft.meta, warped)


def warp_labels(labels: LabelVolume, phi: DisplacementField) -> LabelVolume:
    """Resample a label volume at phi(x) with nearest-neighbor lookup."""
    check_same_grid(labels, phi, "labels and field")
    pts = _grid_points(labels.meta.dims) + phi.u.reshape(-1, 3)
    out = np.empty(labels.meta.n_voxels, dtype=np.uint8)
    _interp.sample_nearest_pts(labels.labels, pts, out)
    return LabelVolume(labels.meta, out.reshape(labels.meta.dims))


def _compose_u(u1, u2):
    # compose(phi1, phi2)(x) = phi1(phi2(x)):  u = u1(x + u2(x)) + u2(x)
    out = np.empty_like(u1)
    _interp.warp(u1, u2, out)
    out += u2
    return out


def compose(phi1: DisplacementField, phi2: DisplacementField) -> DisplacementField:
    """Compose two deformations so the result maps x to phi1(phi2(x))."""
    check_same_grid(phi1, phi2, "fields")
    check_sampleable(phi1.meta)
    return DisplacementField(phi1.meta, _compose_u(np.ascontiguousarray(phi1.u),
                                                   np.ascontiguousarray(phi2.u)))


def _integrate_u(v, steps, tape=None):
    u = v / float(2 ** steps)
    if tape is not None:
        tape.append(u)
    for _ in range(steps):
        u = _compose_u(u, u)
        if tape is not None:
            tape.append(u)
    return u


def integrate_svf(v: VelocityField, steps: int = 7) -> DisplacementField:
    """Integrate a stationary velocity field by scaling and squaring.

    The field is divided by ``2**steps`` and the resulting small displacement
    is composed with itself ``steps`` times. ``steps=0`` reinterprets the
    velocity directly as a displacement.
    """
    if int(steps) != steps or steps < 0:
        raise InvalidInputError(f"squaring steps must be an integer >= 0, got {steps}")
    check_sampleable(v.meta)
    return DisplacementField(v.meta, _integrate_u(np.ascontiguousarray(v.v), int(steps)))


def integrate_svf_euler(v: VelocityField, n_steps: int) -> DisplacementField:
    """Reference flow integration with explicit Euler steps.

    Follows each voxel's trajectory p <- p + sample(v, p) / n_steps for
    ``n_steps`` steps; slow but independent of the squaring scheme, which it
    serves as an oracle for.
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidInputError(f"Euler steps must be an integer >= 1, got {n_steps}")
    check_sampleable(v.meta)
    varr = np.ascontiguousarray(v.v)
    pts = _grid_points(v.meta.dims).copy()
    step = np.empty_like(pts)
    h = 1.0 / n_steps
    for _ in range(int(n_steps)):
        _interp.sample_pts(varr, pts, step)
        pts += h * step
    u = pts - _grid_points(v.meta.dims)
    return DisplacementField(v.meta, u.reshape(v.meta.dims + (3,)))


def _axis_gradient(f, axis, h):
    # Central differences inside, one-sided at the two faces, step h.
    return np.gradient(f, h, axis=axis, edge_order=1)


def _axis_gradient_adjoint(g, axis, h):
    # Transpose of _axis_gradient: scatter each stencil back to its sources.
    out = np.zeros_like(g)
    n = g.shape[axis]

    def sl(idx):
        index = [slice(None)] * g.ndim
        index[axis] = idx
        return tuple(index)

    out[sl(slice(2, n))] += g[sl(slice(1, n - 1))] / (2.0 * h)
    out[sl(slice(0, n - 2))] -= g[sl(slice(1, n - 1))] / (2.0 * h)
    out[sl(1)] += g[sl(0)] / h
    out[sl(0)] -= g[sl(0)] / h
    out[sl(n - 1)] += g[sl(n - 1)] / h
    out[sl(n - 2)] -= g[sl(n - 1)] / h
    return out


def _displacement_jacobian(u, spacing):
    # G[c][d] = d(u_c * s_c) / d(x_d * s_d); returns the 3x3 of gradient maps.
    return [[_axis_gradient(u[..., c], d, spacing[d]) * spacing[c] for d in range(3)]
            for c in range(3)]


def _det3(g):
    a00, a01, a02 = 1.0 + g[0][0], g[0][1], g[0][2]
    a10, a11, a12 = g[1][0], 1.0 + g[1][1], g[1][2]
    a20, a21, a22 = g[2][0], g[2][1], 1.0 + g[2][2]
    return (a00 * (a11 * a22 - a12 * a21)
            - a01 * (a10 * a22 - a12 * a20)
            + a02 * (a10 * a21 - a11 * a20))


def jacobian_determinant(phi: DisplacementField) -> ScalarVolume:
    """Determinant of d(phi)/dx per voxel; values below 0 indicate folding."""
    if min(phi.meta.dims) < 3:
        raise GridMismatchError(
            f"Jacobian needs at least 3 voxels per axis, got dims {phi.meta.dims}")
    g = _displacement_jacobian(phi.u, phi.meta.spacing)
    return ScalarVolume(phi.meta, _det3(g))
