"""Deterministic synthetic scenes and perturbed hypothesis sets.

Scenes are built from analytic signed distance fields: a ground half-space
plus car shapes from the parametric family. The lidar is simulated by
sphere tracing, instance masks come from full-resolution silhouette
renders, and hypothesis sets are GT boxes under label-preserving jitter
(TP) or one of five corruption modes (FP), balanced 50/50.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .geometry import (BoundingBox3D, CameraModel, Pose, box_corners,
                       inverse_transform_points, make_forward_camera,
                       normalize_quat, quat_from_axis_angle, quat_from_yaw,
                       quat_multiply, quat_to_matrix)
from .ground import GroundPlane, ground_height
from .pipeline import Hypothesis
from .render import RenderConfig, region_from_box, render_silhouette
from .scene import Scene
from .shape_manifold import (FAMILY_RANGES, ShapeFamilyParams, TsdfGrid,
                             family_sdf, grid_axes, manifold_from_grid,
                             synthesize_tsdf)

# Placement envelope (ego frame, meters): keeps cars inside the camera
# frustum and the distance gates.
PLACE_X = (6.0, 22.0)
PLACE_Y_FRAC = 0.42
PLACE_Y_MAX = 8.0

TRUCK_DIMS_RANGE = {"length": (8.0, 13.0), "width": (2.7, 3.4),
                    "height": (3.0, 4.2)}


@dataclass(frozen=True)
class LidarConfig:
    beams: int = 40
    elevation_lo_deg: float = -28.0
    elevation_hi_deg: float = 2.0
    azimuth_span_deg: float = 180.0
    azimuth_res_deg: float = 0.4
    range_noise: float = 0.02
    max_range: float = 60.0
    hit_tol: float = 1e-4
    max_steps: int = 200


@dataclass(frozen=True)
class Placement:
    """One object in the scene; params is None for truck-scale slabs."""

    center: np.ndarray
    yaw: float
    params: ShapeFamilyParams | None = None
    dims: np.ndarray | None = None  # trucks only

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64))
        if self.dims is not None:
            object.__setattr__(self, "dims",
                               np.asarray(self.dims, dtype=np.float64))


@dataclass(frozen=True)
class SceneSpec:
    n_cars: int = 2
    n_trucks: int = 0
    ground_pitch_deg: float = 0.0
    ground_roll_deg: float = 0.0
    sensor_height: float = 1.8
    camera_height: float = 1.6
    lidar: LidarConfig = field(default_factory=LidarConfig)
    placements: tuple = ()  # explicit Placement list overrides sampling
    mask_dilate_px: int = 0
    mask_erode_px: int = 0
    mask_row_dropout: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class PerturbSpec:
    tp_jitter_t: float = 0.15
    tp_jitter_yaw_deg: float = 3.0
    fp_weights: dict = field(default_factory=lambda: {
        "shift": 1.0, "float": 1.0, "ghost": 1.0, "tilt": 1.0, "dims": 1.0})
    shift_range: tuple = (2.0, 5.0)
    float_range: tuple = (1.0, 3.0)
    tilt_range_deg: tuple = (30.0, 150.0)
    tp_iou_min: float = 0.5


@dataclass(frozen=True)
class GeneratedScene:
    scene: Scene
    plane: GroundPlane
    gt_boxes: list
    gt_params: list


def ground_plane_from_angles(pitch_deg: float, roll_deg: float) -> GroundPlane:
    """Plane through the origin tilted by pitch (about y) then roll (about x)."""
    rp = quat_to_matrix(quat_from_axis_angle([0, 1, 0], math.radians(pitch_deg)))
    rr = quat_to_matrix(quat_from_axis_angle([1, 0, 0], math.radians(roll_deg)))
    n = rr @ rp @ np.array([0.0, 0.0, 1.0])
    return GroundPlane(n[0], n[1], n[2], 0.0)


def resting_box(plane: GroundPlane, x: float, y: float, yaw: float,
                dims) -> BoundingBox3D:
    """Box standing on the plane, z-axis along the normal, given yaw."""
    dims = np.asarray(dims, dtype=np.float64)
    n = np.array([plane.a, plane.b, plane.c])
    z_axis = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z_axis, n)
    angle = math.acos(np.clip(n @ z_axis, -1.0, 1.0))
    if np.linalg.norm(axis) < 1e-12:
        q_align = np.array([1.0, 0.0, 0.0, 0.0])
    else:
        q_align = quat_from_axis_angle(axis, angle)
    q = normalize_quat(quat_multiply(q_align, quat_from_yaw(yaw)))
    surface = np.array([x, y, float(ground_height(plane, x, y))])
    center = surface + n * dims[2] / 2.0
    return BoundingBox3D(center, dims, q)


def _sample_params(rng) -> ShapeFamilyParams:
    kw = {}
    for name, (lo, hi) in FAMILY_RANGES.items():
        kw[name] = float(rng.uniform(lo, hi))
    return ShapeFamilyParams(**kw)


def _sample_position(rng):
    x = float(rng.uniform(*PLACE_X))
    y_lim = min(PLACE_Y_FRAC * x, PLACE_Y_MAX)
    y = float(rng.uniform(-y_lim, y_lim))
    return x, y


def _far_enough(center, dims, others, margin=1.0):
    half_diag = math.hypot(dims[0], dims[1]) / 2.0
    for box in others:
        other_diag = math.hypot(box.dims[0], box.dims[1]) / 2.0
        if np.linalg.norm(center[:2] - box.center[:2]) \
                < half_diag + other_diag + margin:
            return False
    return True


def _sample_placements(spec: SceneSpec, plane: GroundPlane, rng):
    placements = []
    boxes = []
    for kind in ["car"] * spec.n_cars + ["truck"] * spec.n_trucks:
        for attempt in range(1000):
            x, y = _sample_position(rng)
            yaw = float(rng.uniform(-math.pi, math.pi))
            if kind == "car":
                params = _sample_params(rng)
                dims = np.array([params.length, params.width, params.height])
            else:
                params = None
                dims = np.array([float(rng.uniform(*TRUCK_DIMS_RANGE["length"])),
                                 float(rng.uniform(*TRUCK_DIMS_RANGE["width"])),
                                 float(rng.uniform(*TRUCK_DIMS_RANGE["height"]))])
            box = resting_box(plane, x, y, yaw, dims)
            if _far_enough(box.center, dims, boxes):
                placements.append(Placement(box.center, yaw, params,
                                            None if kind == "car" else dims))
                boxes.append(box)
                break
        else:
            raise ConfigError("could not place objects without overlap")
    return placements, boxes


def _truck_sdf(dims, pts):
    """Truck-scale slab: one rounded box over the full dims."""
    half = np.asarray(dims) / 2.0
    from .shape_manifold import _rounded_box_sdf
    return _rounded_box_sdf(pts, np.zeros(3), half, 0.2)


def _object_sdf(placement: Placement, box: BoundingBox3D, pts_ego):
    local = inverse_transform_points(box.pose, pts_ego)
    if placement.params is not None:
        return family_sdf(placement.params, local)
    return _truck_sdf(placement.dims, local)


def simulate_lidar(scene_sdf, origin, cfg: LidarConfig, rng) -> np.ndarray:
    """Sphere-trace one ray per (elevation, azimuth) cell; misses drop out.

    `scene_sdf` maps (N, 3) ego points to signed distances of the combined
    scene geometry. Hit ranges get zero-mean Gaussian noise.
    """
    els = np.radians(np.linspace(cfg.elevation_lo_deg, cfg.elevation_hi_deg,
                                 cfg.beams))
    n_az = int(round(cfg.azimuth_span_deg / cfg.azimuth_res_deg)) + 1
    azs = np.radians(np.linspace(-cfg.azimuth_span_deg / 2,
                                 cfg.azimuth_span_deg / 2, n_az))
    ee, aa = np.meshgrid(els, azs, indexing="ij")  # elevation-major order
    dirs = np.stack([np.cos(ee) * np.cos(aa),
                     np.cos(ee) * np.sin(aa),
                     np.sin(ee)], axis=-1).reshape(-1, 3)
    origin = np.asarray(origin, dtype=np.float64)
    n_rays = len(dirs)
    noise = rng.normal(0.0, cfg.range_noise, n_rays) if cfg.range_noise > 0 \
        else np.zeros(n_rays)

    t = np.zeros(n_rays)
    hit = np.zeros(n_rays, dtype=bool)
    active = np.ones(n_rays, dtype=bool)
    for _ in range(cfg.max_steps):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        p = origin + t[idx, None] * dirs[idx]
        d = scene_sdf(p)
        newly_hit = d < cfg.hit_tol
        hit[idx[newly_hit]] = True
        active[idx[newly_hit]] = False
        adv = idx[~newly_hit]
        t[adv] += d[~newly_hit]
        active[adv] &= t[adv] < cfg.max_range

    r = t[hit] + noise[hit]
    return origin + r[:, None] * dirs[hit]


def _apply_mask_knobs(mask, spec: SceneSpec, rng):
    if spec.mask_dilate_px or spec.mask_erode_px:
        from scipy.ndimage import binary_dilation, binary_erosion
        if spec.mask_erode_px:
            mask = binary_erosion(mask, iterations=spec.mask_erode_px)
        if spec.mask_dilate_px:
            mask = binary_dilation(mask, iterations=spec.mask_dilate_px)
    if spec.mask_row_dropout > 0:
        drop = rng.random(mask.shape[0]) < spec.mask_row_dropout
        mask = mask.copy()
        mask[drop] = False
    return mask


def _render_instance_mask(placement: Placement, box: BoundingBox3D,
                          cam: CameraModel, spec: SceneSpec, rng):
    """Full-resolution silhouette of the object's own grid, cut at 0.5."""
    if placement.params is not None:
        grid = synthesize_tsdf(placement.params)
    else:
        half = placement.dims * 0.75  # grid padding around the slab
        res = 48
        origin, voxel = grid_axes(res, half)
        ax = [origin[a] + np.arange(res) * voxel[a] for a in range(3)]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        vals = np.clip(_truck_sdf(placement.dims, pts), -0.3, 0.3)
        grid = TsdfGrid(vals.reshape(res, res, res), origin, voxel, 0.3)

    manifold = manifold_from_grid(grid)
    region = region_from_box(cam, box_corners(box), dilate=0.15)
    mask = np.zeros((cam.height, cam.width), dtype=bool)
    if region is None:
        return mask
    cfg = RenderConfig(downsample=1)
    sil = render_silhouette(manifold, np.zeros(0), box.pose, cam, region, cfg)
    u0, v0, u1, v1 = region
    mask[v0:v1, u0:u1] = sil.values > 0.5
    return _apply_mask_knobs(mask, spec, rng)


def generate_scene(spec: SceneSpec) -> GeneratedScene:
    """Scene from a spec: pure function of (spec, seed)."""
    rng = np.random.default_rng(spec.seed)
    plane = ground_plane_from_angles(spec.ground_pitch_deg, spec.ground_roll_deg)
    cam = make_forward_camera([0.0, 0.0, spec.camera_height])

    if spec.placements:
        placements = list(spec.placements)
        boxes = []
        for pl in placements:
            if pl.params is not None:
                dims = np.array([pl.params.length, pl.params.width,
                                 pl.params.height])
            else:
                dims = pl.dims
            boxes.append(BoundingBox3D(pl.center, dims,
                                       quat_from_yaw(pl.yaw)))
    else:
        placements, boxes = _sample_placements(spec, plane, rng)

    normal = np.array([plane.a, plane.b, plane.c])

    def scene_sdf(pts):
        d = pts @ normal - plane.d
        for pl, box in zip(placements, boxes):
            d = np.minimum(d, _object_sdf(pl, box, pts))
        return d

    origin = np.array([0.0, 0.0, spec.sensor_height])
    points = simulate_lidar(scene_sdf, origin, spec.lidar, rng)

    masks = [_render_instance_mask(pl, box, cam, spec, rng)
             for pl, box in zip(placements, boxes)]

    scene = Scene(points, cam, masks, origin)
    gt_params = [pl.params for pl in placements]
    return GeneratedScene(scene, plane, boxes, gt_params)


# --- hypothesis perturbation --------------------------------------------------

def box_iou_sampled(a: BoundingBox3D, b: BoundingBox3D, n: int = 4096,
                    rng=None) -> float:
    """Monte-Carlo 3D IoU: uniform samples in `a` tested against `b`."""
    rng = rng or np.random.default_rng(0)
    local = rng.uniform(-0.5, 0.5, (n, 3)) * a.dims
    pts = local @ quat_to_matrix(a.quat).T + a.center
    inside = inverse_transform_points(b.pose, pts)
    frac = np.mean(np.all(np.abs(inside) <= b.dims / 2.0, axis=1))
    inter = a.volume * float(frac)
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def _jitter_tp(box: BoundingBox3D, spec: PerturbSpec, rng) -> BoundingBox3D:
    for _ in range(50):
        dt = rng.normal(0.0, spec.tp_jitter_t, 3)
        dyaw = math.radians(rng.normal(0.0, spec.tp_jitter_yaw_deg))
        q = normalize_quat(quat_multiply(quat_from_yaw(dyaw), box.quat))
        cand = BoundingBox3D(box.center + dt, box.dims, q)
        if box_iou_sampled(cand, box, rng=np.random.default_rng(
                rng.integers(2**32))) > spec.tp_iou_min:
            return cand
    return box


def _make_fp(mode: str, gt_boxes, spec: PerturbSpec, plane: GroundPlane, rng):
    base = gt_boxes[int(rng.integers(len(gt_boxes)))]
    if mode == "shift":
        ang = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(*spec.shift_range)
        dt = np.array([math.cos(ang), math.sin(ang), 0.0]) * dist
        return BoundingBox3D(base.center + dt, base.dims, base.quat)
    if mode == "float":
        lift = rng.uniform(*spec.float_range)
        return BoundingBox3D(base.center + np.array([0.0, 0.0, lift]),
                             base.dims, base.quat)
    if mode == "ghost":
        for _ in range(200):
            x, y = _sample_position(rng)
            yaw = rng.uniform(-math.pi, math.pi)
            dims = np.array([rng.uniform(*FAMILY_RANGES["length"]),
                             rng.uniform(*FAMILY_RANGES["width"]),
                             rng.uniform(*FAMILY_RANGES["height"])])
            box = resting_box(plane, x, y, yaw, dims)
            if _far_enough(box.center, dims, gt_boxes, margin=2.0):
                return box
        return resting_box(plane, PLACE_X[1], PLACE_Y_MAX, 0.0,
                           np.array([4.2, 1.8, 1.5]))
    if mode == "tilt":
        for _ in range(50):
            axis = rng.normal(0.0, 1.0, 3)
            angle = math.radians(rng.uniform(*spec.tilt_range_deg))
            q = normalize_quat(quat_multiply(quat_from_axis_angle(axis, angle),
                                             base.quat))
            cand = BoundingBox3D(base.center, base.dims, q)
            if box_iou_sampled(cand, base, rng=np.random.default_rng(
                    rng.integers(2**32))) <= 0.5:
                return cand
        return cand
    if mode == "dims":
        dims = np.array([rng.uniform(*TRUCK_DIMS_RANGE["length"]),
                         rng.uniform(*TRUCK_DIMS_RANGE["width"]),
                         rng.uniform(*TRUCK_DIMS_RANGE["height"])])
        return resting_box(plane, base.center[0], base.center[1], 0.0, dims)
    raise ConfigError(f"unknown FP mode {mode!r}")


def perturb_hypotheses(gt_boxes, spec: PerturbSpec, seed: int,
                       plane: GroundPlane, n: int = 10,
                       id_prefix: str = "h") -> list[Hypothesis]:
    """Exactly balanced labeled hypothesis set (TPs first come, then FPs).

    TPs are jittered GT boxes kept above the IoU floor; FPs are drawn from
    the weighted corruption modes.
    """
    if not gt_boxes:
        raise ConfigError("need at least one GT box")
    rng = np.random.default_rng(seed)
    n_tp = n // 2
    out = []
    for i in range(n_tp):
        base = gt_boxes[i % len(gt_boxes)]
        box = _jitter_tp(base, spec, rng)
        out.append(Hypothesis(box, score=float(rng.uniform(0.6, 1.0)),
                              id=f"{id_prefix}_{i:03d}", label="TP",
                              mode="tp-jitter"))
    modes = sorted(spec.fp_weights)
    weights = np.array([spec.fp_weights[m] for m in modes], dtype=np.float64)
    weights = weights / weights.sum()
    for i in range(n_tp, n):
        mode = modes[int(rng.choice(len(modes), p=weights))]
        box = _make_fp(mode, gt_boxes, spec, plane, rng)
        out.append(Hypothesis(box, score=float(rng.uniform(0.6, 1.0)),
                              id=f"{id_prefix}_{i:03d}", label="FP",
                              mode=f"fp-{mode}"))
    return out
