# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the hot sampling kernels.

Must stay semantically identical to `_kernels_py`; the parity test in the
suite and the benchmark script compare the two backends directly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline double _sample_point(const double[:, :, :, ::1] grids,
                                 const double[::1] z,
                                 const double* origin, const double* inv_voxel,
                                 double delta,
                                 double px, double py, double pz) noexcept nogil:
    cdef Py_ssize_t nx = grids.shape[1]
    cdef Py_ssize_t ny = grids.shape[2]
    cdef Py_ssize_t nz = grids.shape[3]
    cdef Py_ssize_t n_comp = z.shape[0]

    cdef double ux = (px - origin[0]) * inv_voxel[0]
    cdef double uy = (py - origin[1]) * inv_voxel[1]
    cdef double uz = (pz - origin[2]) * inv_voxel[2]
    if ux < 0.0 or ux > nx - 1 or uy < 0.0 or uy > ny - 1 \
            or uz < 0.0 or uz > nz - 1:
        return delta

    cdef Py_ssize_t ix = <Py_ssize_t>floor(ux)
    cdef Py_ssize_t iy = <Py_ssize_t>floor(uy)
    cdef Py_ssize_t iz = <Py_ssize_t>floor(uz)
    if ix > nx - 2:
        ix = nx - 2
    if iy > ny - 2:
        iy = ny - 2
    if iz > nz - 2:
        iz = nz - 2

    cdef double fx = ux - ix
    cdef double fy = uy - iy
    cdef double fz = uz - iz

    cdef double acc = 0.0
    cdef double node, w
    cdef Py_ssize_t cx, cy, cz, g
    for cx in range(2):
        for cy in range(2):
            for cz in range(2):
                w = (fx if cx else 1.0 - fx) \
                    * (fy if cy else 1.0 - fy) \
                    * (fz if cz else 1.0 - fz)
                node = grids[0, ix + cx, iy + cy, iz + cz]
                for g in range(n_comp):
                    node += z[g] * grids[g + 1, ix + cx, iy + cy, iz + cz]
                if node > delta:
                    node = delta
                elif node < -delta:
                    node = -delta
                acc += w * node
    return acc


def sample_phi(grids, z, origin, inv_voxel, double delta, pts):
    """Clamped trilinear sample of the combined field at `pts` (N, 3)."""
    cdef const double[:, :, :, ::1] g = np.ascontiguousarray(grids, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(
        np.asarray(z, dtype=np.float64).ravel())
    cdef const double[::1] ov = np.ascontiguousarray(
        np.asarray(origin, dtype=np.float64))
    cdef const double[::1] iv = np.ascontiguousarray(
        np.asarray(inv_voxel, dtype=np.float64))
    cdef const double[:, ::1] p = np.ascontiguousarray(
        np.atleast_2d(np.asarray(pts, dtype=np.float64)))

    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _sample_point(g, zv, &ov[0], &iv[0], delta,
                                   p[i, 0], p[i, 1], p[i, 2])
    return out_arr


def ray_min_phi(grids, z, origin, inv_voxel, double delta, base, incs,
                k_lo, k_hi):
    """Minimum field value along each ray; (phi_min, argmin_k) per ray."""
    cdef const double[:, :, :, ::1] g = np.ascontiguousarray(grids, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(
        np.asarray(z, dtype=np.float64).ravel())
    cdef const double[::1] ov = np.ascontiguousarray(
        np.asarray(origin, dtype=np.float64))
    cdef const double[::1] iv = np.ascontiguousarray(
        np.asarray(inv_voxel, dtype=np.float64))
    cdef const double[::1] b = np.ascontiguousarray(
        np.asarray(base, dtype=np.float64))
    cdef const double[:, ::1] inc = np.ascontiguousarray(
        np.atleast_2d(np.asarray(incs, dtype=np.float64)))
    cdef const long long[::1] lo = np.ascontiguousarray(
        np.asarray(k_lo, dtype=np.int64))
    cdef const long long[::1] hi = np.ascontiguousarray(
        np.asarray(k_hi, dtype=np.int64))

    cdef Py_ssize_t n_rays = inc.shape[0]
    phi_arr = np.full(n_rays, delta, dtype=np.float64)
    arg_arr = np.full(n_rays, -1, dtype=np.int64)
    cdef double[::1] phi_min = phi_arr
    cdef long long[::1] argmin_k = arg_arr

    cdef Py_ssize_t r
    cdef long long k
    cdef double best, val, px, py, pz
    cdef long long best_k
    with nogil:
        for r in range(n_rays):
            if hi[r] < lo[r]:
                continue
            best = 1e300
            best_k = -1
            for k in range(lo[r], hi[r] + 1):
                px = b[0] + k * inc[r, 0]
                py = b[1] + k * inc[r, 1]
                pz = b[2] + k * inc[r, 2]
                val = _sample_point(g, zv, &ov[0], &iv[0], delta, px, py, pz)
                if val < best:
                    best = val
                    best_k = k
            phi_min[r] = best
            argmin_k[r] = best_k
    return phi_arr, arg_arr
