"""Numpy implementation of the hot sampling kernels.

Semantics shared with the compiled twin (`_kernels_cy`):

* a shape field is a stack of grids, `grids[0]` の mean plus weighted
  component grids `grids[1:]`; node values are combined as
  `grids[0] + sum_k z[k] * grids[k + 1]` and clamped to [-delta, +delta]
  before trilinear interpolation,
* query points outside the node lattice evaluate to +delta,
* ray queries return the minimum field value over the sample positions
  `base + k * inc` for integer k in [k_lo, k_hi] plus the achieving k.
"""

from __future__ import annotations

import numpy as np

_CORNERS = [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1),
            (1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)]


def _combined_at(grids, z, ix, iy, iz):
    vals = grids[:, ix, iy, iz]
    if len(z):
        return vals[0] + z @ vals[1:]
    return vals[0]


def sample_phi(grids, z, origin, inv_voxel, delta, pts):
    """Clamped trilinear sample of the combined field at `pts` (N, 3)."""
    grids = np.asarray(grids, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    n = np.array(grids.shape[1:], dtype=np.int64)

    u = (pts - origin) * inv_voxel
    inside = np.all((u >= 0.0) & (u <= n - 1), axis=1)

    i = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
    f = u - i
    # zero out garbage indices for outside points so the gathers stay legal
    i[~inside] = 0

    acc = np.zeros(len(pts))
    for cx, cy, cz in _CORNERS:
        w = ((f[:, 0] if cx else 1.0 - f[:, 0])
             * (f[:, 1] if cy else 1.0 - f[:, 1])
             * (f[:, 2] if cz else 1.0 - f[:, 2]))
        node = _combined_at(grids, z, i[:, 0] + cx, i[:, 1] + cy, i[:, 2] + cz)
        acc += w * np.clip(node, -delta, delta)

    return np.where(inside, acc, delta)


def ray_min_phi(grids, z, origin, inv_voxel, delta, base, incs, k_lo, k_hi):
    """Minimum field value along each ray; (phi_min, argmin_k) per ray.

    Rays with an empty sample range (k_hi < k_lo) return (+delta, -1).
    """
    incs = np.atleast_2d(np.asarray(incs, dtype=np.float64))
    k_lo = np.asarray(k_lo, dtype=np.int64)
    k_hi = np.asarray(k_hi, dtype=np.int64)
    n_rays = len(incs)

    lengths = np.maximum(k_hi - k_lo + 1, 0)
    valid = lengths > 0
    phi_min = np.full(n_rays, delta, dtype=np.float64)
    argmin_k = np.full(n_rays, -1, dtype=np.int64)
    total = int(lengths.sum())
    if total == 0:
        return phi_min, argmin_k

    rep = np.repeat(np.arange(n_rays), lengths)
    seg_starts = np.cumsum(lengths) - lengths
    k = np.arange(total) - seg_starts[rep] + k_lo[rep]
    pts = np.asarray(base, dtype=np.float64) + k[:, None] * incs[rep]
    phi = sample_phi(grids, z, origin, inv_voxel, delta, pts)

    minv = np.minimum.reduceat(phi, seg_starts[valid])
    phi_min[valid] = minv

    per_sample_min = phi_min[rep]
    cand = np.flatnonzero(phi == per_sample_min)
    _, first = np.unique(rep[cand], return_index=True)
    hit = cand[first]
    argmin_k[rep[hit]] = k[hit]
    return phi_min, argmin_k
