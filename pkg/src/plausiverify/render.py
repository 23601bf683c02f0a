"""Differentiable silhouette rendering of a posed TSDF shape.

Each evaluated pixel casts a camera ray, samples the shape field at fixed
spacing, keeps the minimum signed distance along the ray, and maps it
through a steep sigmoid: pixels whose rays pass inside the shape come out
near 1, misses near 0. A bounding-sphere test skips rays that cannot hit
the shape; skipped rays behave exactly like sampled misses (+delta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .geometry import CameraModel, Pose, quat_to_matrix
from .shape_manifold import ShapeManifold, _check_weights

# Pixel rectangle in full-image coordinates: (u0, v0, u1, v1), half-open.
Region = tuple[int, int, int, int]


@dataclass(frozen=True)
class RenderConfig:
    downsample: int = 8      # evaluate every k-th pixel per axis
    ray_step: float = 0.3    # meters between ray samples
    ray_max: float = 30.0    # meters; last sample depth
    xi_sharp: float = -25.0  # sigmoid sharpness (negative)
    cull: bool = True        # bounding-sphere ray skipping
    refine: bool = False     # parabolic min refinement between samples

    def __post_init__(self):
        if self.downsample < 1:
            raise ConfigError("downsample must be >= 1")
        if self.ray_step <= 0 or self.ray_max <= self.ray_step:
            raise ConfigError("need 0 < ray_step < ray_max")
        if self.xi_sharp >= 0:
            raise ConfigError("xi_sharp must be negative")

    @property
    def n_samples(self) -> int:
        return int(np.floor(self.ray_max / self.ray_step + 1e-9))


@dataclass(frozen=True)
class SilhouetteImage:
    """Per-evaluated-pixel occupancy values in (0, 1).

    values[i, j] belongs to full-image pixel
    (region[0] + j * stride, region[1] + i * stride).
    """

    region: Region
    stride: int
    values: np.ndarray
    pi_floor: float  # value of a guaranteed miss (phi = +delta)

    def pixel_grid(self):
        u0, v0, u1, v1 = self.region
        return (np.arange(u0, u1, self.stride), np.arange(v0, v1, self.stride))


def sigmoid_pi(phi, xi_sharp: float):
    """Occupancy response 1 - 1/(exp(phi * xi) + 1); 0.5 exactly at phi = 0."""
    x = np.clip(np.asarray(phi, dtype=np.float64) * xi_sharp, -60.0, 60.0)
    return 1.0 - 1.0 / (np.exp(x) + 1.0)


def ray_points(cam: CameraModel, pixel, cfg: RenderConfig) -> np.ndarray:
    """Camera-frame sample points along the unit ray through `pixel`.

    Depths are ray_step, 2*ray_step, ... up to ray_max.
    """
    u, v = pixel
    d = cam.pixel_ray_dir(u, v)
    k = np.arange(1, cfg.n_samples + 1)
    return k[:, None] * cfg.ray_step * d


def region_from_box(cam: CameraModel, corners_ego, dilate: float = 0.2,
                    ) -> Region | None:
    """Pixel bounds of projected box corners, dilated and clipped to the image.

    Returns None when no corner is in front of the camera or the clipped
    rectangle is empty.
    """
    pc = cam.ego_to_cam(corners_ego)
    front = pc[:, 2] > 1e-6
    if not front.any():
        return None
    pc = pc[front]
    us = cam.fx * pc[:, 0] / pc[:, 2] + cam.cx
    vs = cam.fy * pc[:, 1] / pc[:, 2] + cam.cy
    du = dilate * max(us.max() - us.min(), 1.0)
    dv = dilate * max(vs.max() - vs.min(), 1.0)
    u0 = int(np.floor(max(us.min() - du, 0)))
    v0 = int(np.floor(max(vs.min() - dv, 0)))
    u1 = int(np.ceil(min(us.max() + du, cam.width)))
    v1 = int(np.ceil(min(vs.max() + dv, cam.height)))
    if u1 <= u0 or v1 <= v0:
        return None
    return (u0, v0, u1, v1)


def _object_from_cam(pose: Pose, cam: CameraModel):
    """Affine map p_obj = M @ p_cam + m."""
    r_obj = quat_to_matrix(pose.q)
    m_rot = r_obj.T @ cam.R.T
    m_off = -m_rot @ cam.t - r_obj.T @ pose.t
    return m_rot, m_off


# Pixel-ray directions depend only on (camera, region, stride); one
# hypothesis triggers hundreds of renders over the same region, so keep a
# small keyed cache.
_DIR_CACHE: dict = {}


def _region_dirs(cam: CameraModel, region: Region, stride: int):
    key = (id(cam), region, stride)
    hit = _DIR_CACHE.get(key)
    if hit is not None and hit[0] is cam:
        return hit[1], hit[2]
    u0, v0, u1, v1 = region
    us = np.arange(u0, u1, stride, dtype=np.float64)
    vs = np.arange(v0, v1, stride, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)  # rows follow v
    dirs = cam.pixel_ray_dir(uu.ravel(), vv.ravel())
    if len(_DIR_CACHE) > 64:
        _DIR_CACHE.clear()
    _DIR_CACHE[key] = (cam, dirs, (len(vs), len(us)))
    return dirs, (len(vs), len(us))


def _sphere_sample_range(dirs, center_cam, radius, cfg: RenderConfig):
    """Inclusive k index ranges of samples inside the bounding sphere."""
    n = cfg.n_samples
    sd = dirs @ center_cam
    d2 = center_cam @ center_cam - sd * sd
    q2 = radius * radius - d2
    miss = q2 < 0.0
    q = np.sqrt(np.maximum(q2, 0.0))
    s_lo = sd - q
    s_hi = sd + q
    k_lo = np.maximum(np.ceil(s_lo / cfg.ray_step - 1e-9).astype(np.int64), 1)
    k_hi = np.minimum(np.floor(s_hi / cfg.ray_step + 1e-9).astype(np.int64), n)
    empty = miss | (k_hi < k_lo) | (s_hi <= 0)
    k_lo[empty] = 1
    k_hi[empty] = 0
    return k_lo, k_hi


def render_silhouette(m: ShapeManifold, z, pose: Pose, cam: CameraModel,
                      region: Region, cfg: RenderConfig = RenderConfig(),
                      return_argmin: bool = False):
    """Render the shape under weights z at `pose` into the pixel region.

    With `return_argmin` the per-pixel sample index of the minimal field
    value is returned alongside (-1 for culled rays); the index set is the
    diagnostic for gradient-discontinuity checks.
    """
    u0, v0, u1, v1 = region
    if u1 <= u0 or v1 <= v0:
        raise ConfigError(f"empty render region {region}")
    if not (0 <= u0 and u1 <= cam.width and 0 <= v0 and v1 <= cam.height):
        raise ConfigError(f"region {region} outside image bounds")
    z = _check_weights(m, z, clamp=True)

    dirs, grid_shape = _region_dirs(cam, region, cfg.downsample)

    m_rot, m_off = _object_from_cam(pose.normalized(), cam)
    incs = np.ascontiguousarray((dirs @ m_rot.T) * cfg.ray_step)

    n_rays = len(dirs)
    if cfg.cull:
        center_cam = cam.ego_to_cam(pose.t)
        k_lo, k_hi = _sphere_sample_range(dirs, center_cam,
                                          m.mean.half_diagonal, cfg)
    else:
        k_lo = np.ones(n_rays, dtype=np.int64)
        k_hi = np.full(n_rays, cfg.n_samples, dtype=np.int64)

    phi_min, argmin_k = kernels.ray_min_phi(
        m._stack, z, m.mean.origin, m._inv_voxel, m.delta, m_off, incs,
        k_lo, k_hi)
    phi_min = np.asarray(phi_min)
    argmin_k = np.asarray(argmin_k)

    if cfg.refine:
        phi_min = _refine_minima(m, z, m_off, incs, k_lo, k_hi, argmin_k,
                                 phi_min)

    values = sigmoid_pi(phi_min, cfg.xi_sharp).reshape(grid_shape)
    sil = SilhouetteImage(region, cfg.downsample, values,
                          float(sigmoid_pi(m.delta, cfg.xi_sharp)))
    if return_argmin:
        return sil, argmin_k.reshape(grid_shape)
    return sil


def _refine_minima(m, z, base, incs, k_lo, k_hi, argmin_k, phi_min):
    """Parabolic refinement of the per-ray minimum between sample positions."""
    interior = (argmin_k > k_lo) & (argmin_k < k_hi)
    if not interior.any():
        return phi_min
    idx = np.flatnonzero(interior)
    k0 = argmin_k[idx].astype(np.float64)
    p_lo = base + (k0 - 1)[:, None] * incs[idx]
    p_hi = base + (k0 + 1)[:, None] * incs[idx]
    f_lo = kernels.sample_phi(m._stack, z, m.mean.origin, m._inv_voxel,
                              m.delta, p_lo)
    f_hi = kernels.sample_phi(m._stack, z, m.mean.origin, m._inv_voxel,
                              m.delta, p_hi)
    f0 = phi_min[idx]
    denom = f_lo - 2.0 * f0 + f_hi
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom > 1e-12, 0.5 * (f_lo - f_hi) / denom, 0.0)
    off = np.clip(off, -1.0, 1.0)
    p_ref = base + (k0 + off)[:, None] * incs[idx]
    f_ref = kernels.sample_phi(m._stack, z, m.mean.origin, m._inv_voxel,
                               m.delta, p_ref)
    out = phi_min.copy()
    out[idx] = np.minimum(f0, f_ref)
    return out
