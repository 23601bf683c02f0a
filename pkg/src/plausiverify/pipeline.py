"""End-to-end hypothesis verification.

Cheap gates run first (distance, box dims, point count, mask match, then
the ground priors); only survivors pay for the two-step energy
optimization. The thresholded scalar is the point-cloud energy after the
second step, with a guard that flags hypotheses whose point-cloud energy
was dragged up while the priors were pushed down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import optim, render
from .energy import (C1, C2, HUBER_EPS, MASK_EPS, EnergyBreakdown,
                     EnergyContext, EnergyWeights, MaskProbabilities,
                     composite_energy, energy_hog, energy_rot, make_objective)
from .errors import EvaluationError
from .geometry import (BoundingBox3D, CameraModel, box_corners,
                       inverse_transform_points, pack_state, transform_points,
                       quat_to_matrix)
from .ground import GroundPlane, RansacConfig, fit_ransac, plane_normal
from .optim import OptimizerConfig
from .render import RenderConfig, region_from_box
from .scene import Scene
from .shape_manifold import FAMILY_RANGES, ShapeManifold

STAGE_DISTANCE = "gated-distance"
STAGE_DIMS = "gated-dims"
STAGE_POINTS = "gated-points"
STAGE_NO_MASK = "gated-no-mask"
STAGE_PRIOR = "gated-prior"
STAGE_OPTIMIZED = "optimized"

GATE_STAGES = (STAGE_DISTANCE, STAGE_DIMS, STAGE_POINTS, STAGE_NO_MASK,
               STAGE_PRIOR)


def _default_dims_envelope():
    """Plausible car-box envelope: family extremes widened by 25%."""
    lo = np.array([FAMILY_RANGES["length"][0], FAMILY_RANGES["width"][0],
                   FAMILY_RANGES["height"][0]]) * 0.75
    hi = np.array([FAMILY_RANGES["length"][1], FAMILY_RANGES["width"][1],
                   FAMILY_RANGES["height"][1]]) * 1.25
    return lo, hi


@dataclass(frozen=True)
class Hypothesis:
    """A detector proposal to be verified."""

    box: BoundingBox3D
    score: float = 1.0
    id: str = "h"
    label: str | None = None  # TP/FP ground truth when known (evaluation only)
    mode: str | None = None   # perturbation mode that produced it


@dataclass(frozen=True)
class PipelineConfig:
    gate_x: float = 30.0          # meters in front/back of the camera
    gate_y: float = 15.0          # meters to the left/right
    min_points: int = 20
    outlier_radius: float = 0.5
    min_neighbors: int = 4
    crop_margin: float = 1.1
    dims_lo: np.ndarray = field(default_factory=lambda: _default_dims_envelope()[0])
    dims_hi: np.ndarray = field(default_factory=lambda: _default_dims_envelope()[1])
    prior_gate: float = 1.0       # max e_hog + e_rot admitted to optimization
    kappa: float = 0.5            # plausibility threshold on the final energy
    mask_iou_min: float = 0.3
    grad_change_rel: float = 0.10
    grad_change_abs: float = 0.02  # absolute slack before the FP flag fires
    region_dilate: float = 0.2
    eps_m: float = MASK_EPS
    huber_eps: float = HUBER_EPS
    weights_c1: EnergyWeights = C1
    weights_c2: EnergyWeights = C2
    render: RenderConfig = field(default_factory=RenderConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    opt_step1: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(
        obj_rel_tol=1e-4))
    opt_step2: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(
        grad_tol=1e-3, obj_rel_tol=0.01))

    def __post_init__(self):
        object.__setattr__(self, "dims_lo", np.asarray(self.dims_lo, dtype=np.float64))
        object.__setattr__(self, "dims_hi", np.asarray(self.dims_hi, dtype=np.float64))


@dataclass(frozen=True)
class Verdict:
    """Per-hypothesis outcome record."""

    hypothesis_id: str
    stage: str
    plausible: int
    final_energy: float
    breakdown_c1: EnergyBreakdown | None = None
    breakdown_c2: EnergyBreakdown | None = None
    optimized_state: np.ndarray | None = None
    label: str | None = None
    mode: str | None = None
    diagnostic: str = ""


def pipeline_config_from_dict(d: dict) -> PipelineConfig:
    """PipelineConfig from a (possibly partial) JSON-style dict."""
    d = dict(d)
    kwargs = {}
    for key, cls in (("render", RenderConfig), ("ransac", RansacConfig),
                     ("opt_step1", OptimizerConfig),
                     ("opt_step2", OptimizerConfig)):
        if key in d:
            kwargs[key] = cls(**d.pop(key))
    for key in ("weights_c1", "weights_c2"):
        if key in d:
            kwargs[key] = EnergyWeights(*d.pop(key))
    known = PipelineConfig.__dataclass_fields__
    for key, value in d.items():
        if key not in known:
            raise ValueError(f"unknown pipeline config key {key!r}")
        kwargs[key] = value
    return PipelineConfig(**kwargs)


def decide(final_energy: float, kappa: float) -> int:
    """1 iff the energy does not exceed the threshold; NaN is implausible."""
    if math.isnan(final_energy):
        return 0
    return int(final_energy <= kappa)


def crop_points(cloud, box: BoundingBox3D, margin: float = 1.1,
                outlier_radius: float = 0.5, min_neighbors: int = 4,
                ) -> np.ndarray:
    """Object-frame points inside the margin-scaled box, outliers removed.

    A point survives outlier removal when at least `min_neighbors` other
    cropped points lie within `outlier_radius`.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=np.float64))
    local = inverse_transform_points(box.pose, cloud)
    half = margin * box.dims / 2.0
    inside = np.all(np.abs(local) <= half, axis=1)
    pts = local[inside]
    if len(pts) == 0:
        return pts
    tree = cKDTree(pts)
    counts = tree.query_ball_point(pts, outlier_radius, return_length=True)
    return pts[counts >= min_neighbors + 1]  # the query point counts itself


def _mask_bbox(mask):
    rows = np.any(mask, axis=1)
    cols = np.any(mask, axis=0)
    if not rows.any():
        return None
    v0, v1 = np.flatnonzero(rows)[[0, -1]]
    u0, u1 = np.flatnonzero(cols)[[0, -1]]
    return (float(u0), float(v0), float(u1 + 1), float(v1 + 1))


def _rect_iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def match_mask(h: Hypothesis, masks, cam: CameraModel, iou_min: float = 0.3):
    """Best instance mask by bounding-rectangle IoU, or None.

    Ties prefer the larger mask, then the lower index. A box fully behind
    the camera matches nothing.
    """
    pc = cam.ego_to_cam(box_corners(h.box))
    front = pc[:, 2] > 1e-6
    if not front.any():
        return None
    pc = pc[front]
    us = cam.fx * pc[:, 0] / pc[:, 2] + cam.cx
    vs = cam.fy * pc[:, 1] / pc[:, 2] + cam.cy
    hyp_rect = (us.min(), vs.min(), us.max(), vs.max())

    best = None
    for i, mask in enumerate(masks):
        bbox = _mask_bbox(mask)
        if bbox is None:
            continue
        iou = _rect_iou(hyp_rect, bbox)
        if iou < iou_min:
            continue
        key = (iou, int(np.count_nonzero(mask)), -i)
        if best is None or key > best[0]:
            best = (key, i, iou)
    if best is None:
        return None
    return best[1], best[2]


@dataclass(frozen=True)
class PrefilterPass:
    points_obj: np.ndarray
    points_ego: np.ndarray
    mask_index: int
    region: tuple


@dataclass(frozen=True)
class PrefilterGated:
    stage: str
    final_energy: float


def prefilter(h: Hypothesis, scene: Scene, cfg: PipelineConfig):
    """Distance, dims, point-count and mask gates, in that order."""
    cam_pos = scene.cam.position()
    rel = h.box.center - cam_pos
    if abs(rel[0]) > cfg.gate_x or abs(rel[1]) > cfg.gate_y:
        return PrefilterGated(STAGE_DISTANCE, 2.0 * cfg.kappa)

    viol = np.maximum(cfg.dims_lo - h.box.dims, 0.0) \
        + np.maximum(h.box.dims - cfg.dims_hi, 0.0)
    if np.any(viol > 0):
        return PrefilterGated(STAGE_DIMS,
                              cfg.kappa + float(np.sqrt(np.sum(viol * viol))))

    pts_obj = crop_points(scene.points, h.box, cfg.crop_margin,
                          cfg.outlier_radius, cfg.min_neighbors)
    if len(pts_obj) < cfg.min_points:
        return PrefilterGated(STAGE_POINTS, 2.0 * cfg.kappa)

    matched = match_mask(h, scene.masks, scene.cam, cfg.mask_iou_min)
    region = region_from_box(scene.cam, box_corners(h.box), cfg.region_dilate)
    if matched is None or region is None:
        return PrefilterGated(STAGE_NO_MASK, 2.0 * cfg.kappa)

    pts_ego = transform_points(h.box.pose, pts_obj)
    return PrefilterPass(pts_obj, pts_ego, matched[0], region)


def fit_scene_plane(scene: Scene, cfg: PipelineConfig) -> GroundPlane:
    """Per-scene RANSAC ground fit; candidates below the sensor height."""
    rc = cfg.ransac
    if rc.max_z is None:
        rc = replace(rc, max_z=float(scene.sensor_origin[2]))
    return fit_ransac(scene.points, rc)


def verify_hypothesis(h: Hypothesis, scene: Scene, manifold: ShapeManifold,
                      cfg: PipelineConfig, plane: GroundPlane | None = None,
                      return_artifacts: bool = False):
    """Run the full gate + two-step optimization pipeline on one hypothesis."""
    if plane is None:
        plane = fit_scene_plane(scene, cfg)

    def done(verdict, artifacts=None):
        if return_artifacts:
            return verdict, artifacts or {}
        return verdict

    pre = prefilter(h, scene, cfg)
    if isinstance(pre, PrefilterGated):
        return done(Verdict(h.id, pre.stage, 0, pre.final_energy,
                            label=h.label, mode=h.mode))

    pose0 = h.box.pose.normalized()
    e_prior = (energy_hog(pose0.t, float(h.box.dims[2]), plane)
               + energy_rot(quat_to_matrix(pose0.q), plane_normal(plane)))
    if e_prior > cfg.prior_gate:
        return done(Verdict(h.id, STAGE_PRIOR, 0, float(e_prior),
                            label=h.label, mode=h.mode))

    mask = MaskProbabilities.from_mask(scene.masks[pre.mask_index], pre.region,
                                       cfg.render.downsample, cfg.eps_m)
    ctx = EnergyContext(manifold, pre.points_ego, mask, pre.region, plane,
                        scene.cam, h.box.dims, cfg.render, cfg.huber_eps)

    x0 = pack_state(pose0, np.zeros(manifold.n_components))
    bounds = [(None, None)] * 7 + [(-1.0, 1.0)] * manifold.n_components

    try:
        x1, _, trace1 = optim.minimize_bounded(
            make_objective(ctx, cfg.weights_c1), x0, bounds, cfg.opt_step1)
        bd1 = composite_energy(x1, ctx, cfg.weights_c1)
        x2, _, trace2 = optim.minimize(
            make_objective(ctx, cfg.weights_c2), x1, cfg.opt_step2)
        bd2 = composite_energy(x2, ctx, cfg.weights_c2)
    except EvaluationError as err:
        return done(Verdict(h.id, STAGE_OPTIMIZED, 0, float("inf"),
                            label=h.label, mode=h.mode, diagnostic=str(err)))

    slack = max(cfg.grad_change_abs, 1e-6)
    if bd2.e_cd > bd1.e_cd * (1.0 + cfg.grad_change_rel) + slack:
        final = max(bd2.e_cd, 2.0 * cfg.kappa)
        diag = "point-cloud energy increased during the prior step"
    else:
        final = bd2.e_cd
        diag = ""

    verdict = Verdict(h.id, STAGE_OPTIMIZED, decide(final, cfg.kappa), final,
                      breakdown_c1=bd1, breakdown_c2=bd2, optimized_state=x2,
                      label=h.label, mode=h.mode, diagnostic=diag)
    artifacts = {"trace1": trace1, "trace2": trace2, "ctx": ctx,
                 "x0": x0, "x1": x1, "x2": x2, "plane": plane}
    return done(verdict, artifacts)


def verify_scene(scene: Scene, hypotheses, manifold: ShapeManifold,
                 cfg: PipelineConfig) -> list[Verdict]:
    """Verify all hypotheses of one scene against a shared ground fit.

    Output order follows input order.
    """
    plane = fit_scene_plane(scene, cfg)
    return [verify_hypothesis(h, scene, manifold, cfg, plane)
            for h in hypotheses]
