"""TSDF car-shape family and its low-rank shape manifold.

The shape prior is a voxelized truncated signed distance field: mean grid
plus a handful of principal-component grids, addressed by bounded weights z.
Training shapes come from an analytic two-slab rounded-box family (body slab
plus cabin slab) instead of CAD models, which keeps everything deterministic
and gives tests an exact signed-distance oracle.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from . import kernels
from .errors import ConfigError

# Synthetic car envelope: (lo, hi) per family parameter.
FAMILY_RANGES = {
    "length": (3.2, 5.2),
    "width": (1.5, 2.1),
    "height": (1.3, 2.0),
    "cabin_ratio": (0.4, 0.7),
    "roundness": (0.2, 0.6),
}

GRID_RES = 64
TRUNCATION = 0.3  # meters; matches the renderer ray step
# Object-frame grid bounds: 1.2x the largest family dims.
HALF_EXTENT = np.array([1.2 * 5.2 / 2, 1.2 * 2.1 / 2, 1.2 * 2.0 / 2])

_MAGIC = b"TSDFMAN1"


@dataclass(frozen=True)
class ShapeFamilyParams:
    """Parameters of one analytic car shape."""

    length: float
    width: float
    height: float
    cabin_ratio: float = 0.55
    roundness: float = 0.4

    def __post_init__(self):
        for name in ("length", "width", "height"):
            lo, hi = FAMILY_RANGES[name]
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ConfigError(f"{name}={v} outside family range [{lo}, {hi}]")
        for name in ("cabin_ratio", "roundness"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{name}={v} outside (0, 1]")

    def as_dict(self) -> dict:
        return {"length": self.length, "width": self.width, "height": self.height,
                "cabin_ratio": self.cabin_ratio, "roundness": self.roundness}


def _rounded_box_sdf(pts, center, half, radius):
    """Exact SDF of a box with edge rounding `radius`, extents preserved."""
    q = np.abs(pts - center) - (np.asarray(half) - radius)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside - radius


def family_sdf(params: ShapeFamilyParams, pts) -> np.ndarray:
    """Signed distance from object-frame points to the car surface.

    Object frame: x along length, y along width, z up; the shape spans
    z in [-height/2, +height/2]. Negative inside.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    l, w, h = params.length, params.width, params.height

    body_half = np.array([l / 2, w / 2, 0.30 * h])
    body_center = np.array([0.0, 0.0, -0.20 * h])
    cabin_half = np.array([0.5 * params.cabin_ratio * l, 0.42 * w, 0.22 * h])
    cabin_center = np.array([-0.06 * l, 0.0, 0.28 * h])

    r_body = min(0.15 * h * params.roundness, 0.95 * body_half.min())
    r_cabin = min(0.10 * h * params.roundness, 0.95 * cabin_half.min())

    return np.minimum(
        _rounded_box_sdf(pts, body_center, body_half, r_body),
        _rounded_box_sdf(pts, cabin_center, cabin_half, r_cabin),
    )


@dataclass(frozen=True)
class TsdfGrid:
    """Voxel grid of truncated signed distances (negative inside).

    Node (i, j, k) sits at `origin + (i, j, k) * voxel`; all values lie in
    [-delta, +delta].
    """

    values: np.ndarray
    origin: np.ndarray
    voxel: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "voxel", np.asarray(self.voxel, dtype=np.float64))

    @property
    def res(self) -> tuple:
        return self.values.shape

    @property
    def bounds(self) -> np.ndarray:
        """(2, 3): lattice min and max corners."""
        n = np.array(self.values.shape) - 1
        return np.stack([self.origin, self.origin + n * self.voxel])

    @property
    def half_diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm((hi - lo) / 2))

    def node_positions(self):
        axes = [self.origin[a] + np.arange(self.values.shape[a]) * self.voxel[a]
                for a in range(3)]
        return axes


def grid_axes(res: int, half_extent=HALF_EXTENT):
    origin = -np.asarray(half_extent, dtype=np.float64)
    voxel = 2.0 * np.asarray(half_extent, dtype=np.float64) / (res - 1)
    return origin, voxel


def synthesize_tsdf(params: ShapeFamilyParams, res: int = GRID_RES,
                    delta: float = TRUNCATION, half_extent=HALF_EXTENT) -> TsdfGrid:
    """Sample the analytic family SDF on a grid and truncate to ±delta."""
    if res < 8:
        raise ConfigError(f"grid resolution {res} < 8")
    origin, voxel = grid_axes(res, half_extent)
    ax = [origin[a] + np.arange(res) * voxel[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*ax, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    sdf = family_sdf(params, pts).reshape(res, res, res)
    return TsdfGrid(np.clip(sdf, -delta, delta), origin, voxel, delta)


@dataclass(frozen=True)
class ShapeManifold:
    """Mean TSDF plus scaled principal-component grids.

    Components are scaled so a weight of ±1 spans ±2 standard deviations of
    the training coefficients; `decode(z=0)` is exactly the mean.
    """

    mean: TsdfGrid
    components: np.ndarray      # (C, nx, ny, nz)
    singular_values: np.ndarray  # (C,), descending

    def __post_init__(self):
        comp = np.asarray(self.components, dtype=np.float64)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "singular_values",
                           np.asarray(self.singular_values, dtype=np.float64))
        stack = np.ascontiguousarray(
            np.concatenate([self.mean.values[None], comp], axis=0))
        object.__setattr__(self, "_stack", stack)
        object.__setattr__(self, "_inv_voxel", 1.0 / self.mean.voxel)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def delta(self) -> float:
        return self.mean.delta


def manifold_from_grid(grid: TsdfGrid) -> ShapeManifold:
    """Wrap a single grid as a zero-component manifold (z is empty)."""
    comp = np.zeros((0,) + grid.values.shape)
    return ShapeManifold(grid, comp, np.zeros(0))


def build_manifold(samples, n_components: int = 5) -> ShapeManifold:
    """PCA of flattened training grids: elementwise mean + top components."""
    if len(samples) < 2:
        raise ConfigError("need at least 2 training grids")
    ref = samples[0]
    for g in samples[1:]:
        if (g.values.shape != ref.values.shape
                or not np.array_equal(g.origin, ref.origin)
                or not np.array_equal(g.voxel, ref.voxel)
                or g.delta != ref.delta):
            raise ConfigError("training grids must share res, extent and delta")

    x = np.stack([g.values.ravel() for g in samples])
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)

    k = len(samples)
    shape = ref.values.shape
    comps = np.zeros((n_components,) + shape)
    sing = np.zeros(n_components)
    n_avail = min(n_components, len(s))
    for i in range(n_avail):
        v = vt[i]
        # deterministic sign: largest-magnitude entry positive
        j = np.argmax(np.abs(v))
        if v[j] < 0:
            v = -v
        sigma = s[i] / np.sqrt(k - 1)
        comps[i] = (2.0 * sigma * v).reshape(shape)
        sing[i] = s[i]

    mean_grid = TsdfGrid(mean.reshape(shape), ref.origin, ref.voxel, ref.delta)
    return ShapeManifold(mean_grid, comps, sing)


def sample_family_params(k: int) -> list[ShapeFamilyParams]:
    """k family members on a low-discrepancy (Halton) grid over the ranges."""
    sampler = qmc.Halton(d=5, scramble=False)
    unit = sampler.random(k)
    names = list(FAMILY_RANGES)
    out = []
    for row in unit:
        kw = {}
        for j, name in enumerate(names):
            lo, hi = FAMILY_RANGES[name]
            kw[name] = lo + (hi - lo) * row[j]
        out.append(ShapeFamilyParams(**kw))
    return out


@lru_cache(maxsize=4)
def default_manifold(k: int = 40, res: int = GRID_RES, delta: float = TRUNCATION,
                     n_components: int = 5) -> ShapeManifold:
    """The standard manifold: 40 family samples, 64³ grid, delta 0.3 m."""
    grids = [synthesize_tsdf(p, res, delta) for p in sample_family_params(k)]
    return build_manifold(grids, n_components)


def _check_weights(m: ShapeManifold, z, clamp: bool) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (m.n_components,):
        raise ConfigError(f"expected {m.n_components} shape weights, got {z.shape}")
    if clamp and m.n_components and np.any(np.abs(z) > 1.0):
        warnings.warn("shape weights outside [-1, 1]; clamped", RuntimeWarning,
                      stacklevel=3)
        z = np.clip(z, -1.0, 1.0)
    return z


def evaluate_phi(m: ShapeManifold, z, pts, clamp_weights: bool = True) -> np.ndarray:
    """Truncated signed distance of object-frame points under weights z.

    Node values are combined and clamped to ±delta before trilinear
    interpolation, so this equals sampling `decode_shape(m, z)`. Points
    outside the grid return +delta.
    """
    z = _check_weights(m, z, clamp_weights)
    return kernels.sample_phi(m._stack, z, m.mean.origin, m._inv_voxel,
                              m.delta, pts)


def evaluate_phi_raw(m: ShapeManifold, z, pts) -> np.ndarray:
    """Like evaluate_phi but without node clamping (affine in z)."""
    z = _check_weights(m, z, clamp=False)
    big = 1e18  # disables the ±delta node clamp
    vals = kernels.sample_phi(m._stack, z, m.mean.origin, m._inv_voxel, big, pts)
    out = np.where(np.asarray(vals) >= big, m.delta, vals)
    return out


def decode_shape(m: ShapeManifold, z, clamp_weights: bool = True) -> TsdfGrid:
    """Full-grid version of evaluate_phi."""
    z = _check_weights(m, z, clamp_weights)
    vals = m.mean.values.copy()
    if m.n_components:
        vals = vals + np.tensordot(z, m.components, axes=1)
    return TsdfGrid(np.clip(vals, -m.delta, m.delta), m.mean.origin,
                    m.mean.voxel, m.delta)


def project_shape(m: ShapeManifold, grid: TsdfGrid) -> np.ndarray:
    """Least-squares weights reconstructing `grid` from the manifold."""
    if grid.values.shape != m.mean.values.shape:
        raise ConfigError("grid shape does not match manifold")
    diff = (grid.values - m.mean.values).ravel()
    z = np.zeros(m.n_components)
    for i in range(m.n_components):
        c = m.components[i].ravel()
        nrm = c @ c
        if nrm > 0:
            z[i] = (diff @ c) / nrm
    return z


def sample_grid(grid: TsdfGrid, pts) -> np.ndarray:
    """Trilinear sample of a single grid (outside -> +delta)."""
    return kernels.sample_phi(grid.values[None], np.zeros(0), grid.origin,
                              1.0 / grid.voxel, grid.delta, pts)


# --- persistence -------------------------------------------------------------

def save_manifold(m: ShapeManifold, path) -> None:
    """Binary layout: magic, header, float32 grids (mean, components), sigmas."""
    lo, hi = m.mean.bounds
    header = struct.pack(
        "<3I6ddI",
        *m.mean.values.shape,
        *lo, *hi,
        m.delta,
        m.n_components,
    )
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header)
        fh.write(m.mean.values.astype("<f4").tobytes(order="C"))
        for i in range(m.n_components):
            fh.write(m.components[i].astype("<f4").tobytes(order="C"))
        fh.write(m.singular_values.astype("<f4").tobytes())


def load_manifold(path) -> ShapeManifold:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ConfigError(f"{path}: not a shape-manifold file")
        header = fh.read(struct.calcsize("<3I6ddI"))
        nx, ny, nz, x0, y0, z0, x1, y1, z1, delta, n_comp = struct.unpack(
            "<3I6ddI", header)
        origin = np.array([x0, y0, z0])
        voxel = (np.array([x1, y1, z1]) - origin) / (np.array([nx, ny, nz]) - 1)
        count = nx * ny * nz

        def read_grid():
            buf = fh.read(4 * count)
            return np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(
                nx, ny, nz)

        mean = TsdfGrid(read_grid(), origin, voxel, delta)
        comps = np.stack([read_grid() for _ in range(n_comp)]) if n_comp \
            else np.zeros((0, nx, ny, nz))
        sing = np.frombuffer(fh.read(4 * n_comp), dtype="<f4").astype(np.float64)
    return ShapeManifold(mean, comps, sing)
