"""Numba kernels for trilinear/nearest sampling and their adjoints.

All samplers clamp coordinates to ``[0, dim - 1]`` per axis (replicate-edge
boundary). Coordinate derivatives are zero on clamped axes. Channel data is
stored last, ``values[i, j, k, c]``, so one voxel's channels are contiguous.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def sample_pts(values, pts, out):
    # values: (nx, ny, nz, C) f8, pts: (M, 3) f8, out: (M, C) f8
    nx, ny, nz, nc = values.shape
    hx, hy, hz = nx - 1.0, ny - 1.0, nz - 1.0
    for m in prange(pts.shape[0]):
        px = min(max(pts[m, 0], 0.0), hx)
        py = min(max(pts[m, 1], 0.0), hy)
        pz = min(max(pts[m, 2], 0.0), hz)
        ix = min(int(px), nx - 2)
        iy = min(int(py), ny - 2)
        iz = min(int(pz), nz - 2)
        fx = px - ix
        fy = py - iy
        fz = pz - iz
        wx0 = 1.0 - fx
        wy0 = 1.0 - fy
        wz0 = 1.0 - fz
        for c in range(nc):
            c00 = values[ix, iy, iz, c] * wz0 + values[ix, iy, iz + 1, c] * fz
            c01 = values[ix, iy + 1, iz, c] * wz0 + values[ix, iy + 1, iz + 1, c] * fz
            c10 = values[ix + 1, iy, iz, c] * wz0 + values[ix + 1, iy, iz + 1, c] * fz
            c11 = values[ix + 1, iy + 1, iz, c] * wz0 + values[ix + 1, iy + 1, iz + 1, c] * fz
            out[m, c] = (c00 * wy0 + c01 * fy) * wx0 + (c10 * wy0 + c11 * fy) * fx


@njit(cache=True)
def sample_nearest_pts(labels, pts, out):
    # labels: (nx, ny, nz) u1, pts: (M, 3) f8, out: (M,) u1; round half up
    nx, ny, nz = labels.shape
    for m in range(pts.shape[0]):
        ix = min(max(int(np.floor(pts[m, 0] + 0.5)), 0), nx - 1)
        iy = min(max(int(np.floor(pts[m, 1] + 0.5)), 0), ny - 1)
        iz = min(max(int(np.floor(pts[m, 2] + 0.5)), 0), nz - 1)
        out[m] = labels[ix, iy, iz]


@njit(cache=True, parallel=True)
def warp(values, u, out):
    # out(x) = values(x + u(x)); values: (nx, ny, nz, C), u: (nx, ny, nz, 3)
    # each output voxel is independent, so the parallel loop is deterministic
    nx, ny, nz, nc = values.shape
    hx, hy, hz = nx - 1.0, ny - 1.0, nz - 1.0
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                px = min(max(i + u[i, j, k, 0], 0.0), hx)
                py = min(max(j + u[i, j, k, 1], 0.0), hy)
                pz = min(max(k + u[i, j, k, 2], 0.0), hz)
                ix = min(int(px), nx - 2)
                iy = min(int(py), ny - 2)
                iz = min(int(pz), nz - 2)
                fx = px - ix
                fy = py - iy
                fz = pz - iz
                wx0 = 1.0 - fx
                wy0 = 1.0 - fy
                wz0 = 1.0 - fz
                for c in range(nc):
                    c00 = values[ix, iy, iz, c] * wz0 + values[ix, iy, iz + 1, c] * fz
                    c01 = values[ix, iy + 1, iz, c] * wz0 + values[ix, iy + 1, iz + 1, c] * fz
                    c10 = values[ix + 1, iy, iz, c] * wz0 + values[ix + 1, iy, iz + 1, c] * fz
                    c11 = values[ix + 1, iy + 1, iz, c] * wz0 + values[ix + 1, iy + 1, iz + 1, c] * fz
                    out[i, j, k, c] = (c00 * wy0 + c01 * fy) * wx0 + (c10 * wy0 + c11 * fy) * fx


@njit(cache=True, parallel=True)
def warp_coord_grad(values, u, cot, g_u):
    # Adds d<cot, warp(values, u)>/du into g_u, differentiating only through
    # the sampling coordinates (values held fixed). Writes are per-voxel, so
    # the parallel loop stays deterministic.
    nx, ny, nz, nc = values.shape
    hx, hy, hz = nx - 1.0, ny - 1.0, nz - 1.0
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                qx = i + u[i, j, k, 0]
                qy = j + u[i, j, k, 1]
                qz = k + u[i, j, k, 2]
                ax = 1.0 if 0.0 < qx < hx else 0.0
                ay = 1.0 if 0.0 < qy < hy else 0.0
                az = 1.0 if 0.0 < qz < hz else 0.0
                px = min(max(qx, 0.0), hx)
                py = min(max(qy, 0.0), hy)
                pz = min(max(qz, 0.0), hz)
                ix = min(int(px), nx - 2)
                iy = min(int(py), ny - 2)
                iz = min(int(pz), nz - 2)
                fx = px - ix
                fy = py - iy
                fz = pz - iz
                wx0 = 1.0 - fx
                wy0 = 1.0 - fy
                wz0 = 1.0 - fz
                gx = 0.0
                gy = 0.0
                gz = 0.0
                for c in range(nc):
                    v000 = values[ix, iy, iz, c]
                    v001 = values[ix, iy, iz + 1, c]
                    v010 = values[ix, iy + 1, iz, c]
                    v011 = values[ix, iy + 1, iz + 1, c]
                    v100 = values[ix + 1, iy, iz, c]
                    v101 = values[ix + 1, iy, iz + 1, c]
                    v110 = values[ix + 1, iy + 1, iz, c]
                    v111 = values[ix + 1, iy + 1, iz + 1, c]
                    g = cot[i, j, k, c]
                    gx += g * (((v100 - v000) * wz0 + (v101 - v001) * fz) * wy0
                               + ((v110 - v010) * wz0 + (v111 - v011) * fz) * fy)
                    gy += g * (((v010 - v000) * wz0 + (v011 - v001) * fz) * wx0
                               + ((v110 - v100) * wz0 + (v111 - v101) * fz) * fx)
                    gz += g * (((v001 - v000) * wy0 + (v011 - v010) * fy) * wx0
                               + ((v101 - v100) * wy0 + (v111 - v110) * fy) * fx)
                g_u[i, j, k, 0] += gx * ax
                g_u[i, j, k, 1] += gy * ay
                g_u[i, j, k, 2] += gz * az


@njit(cache=True)
def warp_adjoint(values, u, cot, g_values, g_u):
    # Full adjoint of warp(values, u): scatters d<cot, out>/dvalues into
    # g_values and adds the coordinate path into g_u. Serial on purpose so
    # the scatter accumulation stays deterministic.
    nx, ny, nz, nc = values.shape
    hx, hy, hz = nx - 1.0, ny - 1.0, nz - 1.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                qx = i + u[i, j, k, 0]
                qy = j + u[i, j, k, 1]
                qz = k + u[i, j, k, 2]
                ax = 1.0 if 0.0 < qx < hx else 0.0
                ay = 1.0 if 0.0 < qy < hy else 0.0
                az = 1.0 if 0.0 < qz < hz else 0.0
                px = min(max(qx, 0.0), hx)
                py = min(max(qy, 0.0), hy)
                pz = min(max(qz, 0.0), hz)
                ix = min(int(px), nx - 2)
                iy = min(int(py), ny - 2)
                iz = min(int(pz), nz - 2)
                fx = px - ix
                fy = py - iy
                fz = pz - iz
                wx0 = 1.0 - fx
                wy0 = 1.0 - fy
                wz0 = 1.0 - fz
                w000 = wx0 * wy0 * wz0
                w001 = wx0 * wy0 * fz
                w010 = wx0 * fy * wz0
                w011 = wx0 * fy * fz
                w100 = fx * wy0 * wz0
                w101 = fx * wy0 * fz
                w110 = fx * fy * wz0
                w111 = fx * fy * fz
                gx = 0.0
                gy = 0.0
                gz = 0.0
                for c in range(nc):
                    g = cot[i, j, k, c]
                    g_values[ix, iy, iz, c] += g * w000
                    g_values[ix, iy, iz + 1, c] += g * w001
                    g_values[ix, iy + 1, iz, c] += g * w010
                    g_values[ix, iy + 1, iz + 1, c] += g * w011
                    g_values[ix + 1, iy, iz, c] += g * w100
                    g_values[ix + 1, iy, iz + 1, c] += g * w101
                    g_values[ix + 1, iy + 1, iz, c] += g * w110
                    g_values[ix + 1, iy + 1, iz + 1, c] += g * w111
                    v000 = values[ix, iy, iz, c]
                    v001 = values[ix, iy, iz + 1, c]
                    v010 = values[ix, iy + 1, iz, c]
                    v011 = values[ix, iy + 1, iz + 1, c]
                    v100 = values[ix + 1, iy, iz, c]
                    v101 = values[ix + 1, iy, iz + 1, c]
                    v110 = values[ix + 1, iy + 1, iz, c]
                    v111 = values[ix + 1, iy + 1, iz + 1, c]
                    gx += g * (((v100 - v000) * wz0 + (v101 - v001) * fz) * wy0
                               + ((v110 - v010) * wz0 + (v111 - v011) * fz) * fy)
                    gy += g * (((v010 - v000) * wz0 + (v011 - v001) * fz) * wx0
                               + ((v110 - v100) * wz0 + (v111 - v101) * fz) * fx)
                    gz += g * (((v001 - v000) * wy0 + (v011 - v010) * fy) * wx0
                               + ((v101 - v100) * wy0 + (v111 - v110) * fy) * fx)
                g_u[i, j, k, 0] += gx * ax
                g_u[i, j, k, 1] += gy * ay
                g_u[i, j, k, 2] += gz * az
