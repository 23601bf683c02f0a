"""The four energy terms and their weighted composite.

Every term is non-negative and zero exactly at perfect compatibility:
points on the shape surface, silhouette matching the mask, box resting on
the ground, object axis parallel to the ground normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import render
from .errors import ConfigError, PreconditionError
from .geometry import (CameraModel, Pose, inverse_transform_points,
                       normalize_state, quat_to_matrix, unpack_state)
from .ground import GroundPlane, ground_height, plane_normal
from .render import Region, RenderConfig, SilhouetteImage
from .shape_manifold import ShapeManifold, evaluate_phi

HUBER_EPS = 0.01   # squared-meters domain; branch switch at |phi| = 0.1 m
MASK_EPS = 0.01    # probability floor for binary masks


@dataclass(frozen=True)
class EnergyWeights:
    """Importance factors (sil, cd, hog, rot); barrier is an optional
    out-of-bounds shape-weight penalty, disabled by default."""

    sil: float
    cd: float
    hog: float
    rot: float
    barrier: float = 0.0

    def __post_init__(self):
        a = self.as_array()
        if np.any(a < 0) or self.barrier < 0:
            raise ConfigError("energy weights must be non-negative")
        if not np.any(a > 0):
            raise ConfigError("at least one energy weight must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.sil, self.cd, self.hog, self.rot])


C1 = EnergyWeights(0.5, 10.0, 5.0, 5.0)
C2 = EnergyWeights(10.0, 0.1, 1.0, 50.0)
C2_BARRIER = 1e4  # published fifth entry; opt-in via EnergyWeights.barrier


@dataclass(frozen=True)
class EnergyBreakdown:
    e_sil: float
    e_cd: float
    e_hog: float
    e_rot: float
    total: float
    e_barrier: float = 0.0

    def as_tuple(self):
        return (self.e_sil, self.e_cd, self.e_hog, self.e_rot, self.total)


@dataclass(frozen=True)
class MaskProbabilities:
    """Foreground probability per evaluated pixel, floored at eps_m."""

    region: Region
    stride: int
    p_fg: np.ndarray
    eps_m: float = MASK_EPS

    @classmethod
    def from_mask(cls, mask, region: Region, stride: int,
                  eps_m: float = MASK_EPS) -> "MaskProbabilities":
        """Sample a full-image binary mask at the evaluated-pixel grid."""
        mask = np.asarray(mask)
        u0, v0, u1, v1 = region
        sub = mask[v0:v1:stride, u0:u1:stride]
        p = np.where(sub, 1.0 - eps_m, eps_m)
        return cls(region, stride, p, eps_m)


def huber(x, eps: float = HUBER_EPS):
    """x for x <= eps, else 2*sqrt(x) - eps; defined for x >= 0 only."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("huber input must be non-negative (a squared value)")
    return np.where(x <= eps, x, 2.0 * np.sqrt(np.maximum(x, eps)) - eps)


def energy_cd(pts_obj, m: ShapeManifold, z, eps: float = HUBER_EPS,
              return_branch: bool = False):
    """Mean robustified squared field value over the cropped cloud."""
    pts_obj = np.atleast_2d(np.asarray(pts_obj, dtype=np.float64))
    if len(pts_obj) == 0:
        raise PreconditionError("energy_cd needs at least one point")
    phi = np.asarray(evaluate_phi(m, z, pts_obj))
    sq = phi * phi
    e = float(np.mean(huber(sq, eps)))
    if return_branch:
        return e, sq > eps
    return e


def sil_ceiling(eps_m: float, pi_floor: float) -> float:
    """Largest attainable per-pixel silhouette residual."""
    return float(-np.log((1.0 - eps_m) * pi_floor + eps_m * (1.0 - pi_floor)))


def energy_sil(mask: MaskProbabilities, sil: SilhouetteImage) -> float:
    """Mean per-pixel disagreement, normalized to [0, 1]."""
    if mask.region != sil.region or mask.stride != sil.stride:
        raise ConfigError("mask and silhouette regions differ")
    if mask.p_fg.shape != sil.values.shape:
        raise ConfigError("mask and silhouette shapes differ")
    pi = sil.values
    inner = mask.p_fg * pi + (1.0 - mask.p_fg) * (1.0 - pi)
    raw = float(np.mean(-np.log(inner)))
    return raw / sil_ceiling(mask.eps_m, sil.pi_floor)


def energy_hog(t, box_height: float, g: GroundPlane) -> float:
    """Squared height of the box bottom above the local ground."""
    t = np.asarray(t, dtype=np.float64)
    d = t[2] - box_height / 2.0 - ground_height(g, t[0], t[1])
    return float(d * d)


def energy_rot(r_mat, n_g) -> float:
    """Squared misalignment of the object z-axis with the ground normal."""
    r3 = np.asarray(r_mat)[:, 2]
    return float((1.0 - r3 @ np.asarray(n_g)) ** 2)


@dataclass(frozen=True)
class EnergyContext:
    """Everything the composite needs besides the state vector.

    `points_ego` is the cropped cloud in the ego frame; it is re-expressed
    in the object frame of each candidate pose.
    """

    manifold: ShapeManifold
    points_ego: np.ndarray
    mask: MaskProbabilities
    region: Region
    plane: GroundPlane
    cam: CameraModel
    box_dims: np.ndarray
    render_cfg: RenderConfig = field(default_factory=RenderConfig)
    huber_eps: float = HUBER_EPS


@dataclass(frozen=True)
class EnergyDiagnostics:
    """Discontinuity bookkeeping for gradient checks."""

    huber_upper: np.ndarray  # points on the 2*sqrt branch
    ray_argmin: np.ndarray   # per-pixel minimal sample index


def composite_energy(xi, ctx: EnergyContext, w: EnergyWeights,
                     diagnostics: bool = False):
    """Evaluate all four terms at a 12-dim state; total is the weighted sum.

    The quaternion block is renormalized and shape weights are clamped to
    [-1, 1] before evaluation. Pure function of its inputs.
    """
    xi_n = normalize_state(xi)
    pose, z_raw = unpack_state(xi_n)
    z = np.clip(z_raw, -1.0, 1.0)

    pts_obj = inverse_transform_points(pose, ctx.points_ego)
    e_cd, branch = energy_cd(pts_obj, ctx.manifold, z, ctx.huber_eps,
                             return_branch=True)

    sil, argmin = render.render_silhouette(ctx.manifold, z, pose, ctx.cam,
                                           ctx.region, ctx.render_cfg,
                                           return_argmin=True)
    e_sil = energy_sil(ctx.mask, sil)

    e_hog = energy_hog(pose.t, float(ctx.box_dims[2]), ctx.plane)
    e_rot = energy_rot(quat_to_matrix(pose.q), plane_normal(ctx.plane))

    e_bar = 0.0
    if w.barrier > 0:
        over = np.maximum(np.abs(z_raw) - 1.0, 0.0)
        e_bar = float(np.sum(over * over))

    total = (w.sil * e_sil + w.cd * e_cd + w.hog * e_hog + w.rot * e_rot
             + w.barrier * e_bar)
    breakdown = EnergyBreakdown(e_sil, e_cd, e_hog, e_rot, total, e_bar)
    if diagnostics:
        return breakdown, EnergyDiagnostics(branch, argmin)
    return breakdown


def make_objective(ctx: EnergyContext, w: EnergyWeights):
    """Scalar objective xi -> total for the optimizer."""

    def f(xi):
        return composite_energy(xi, ctx, w).total

    return f
