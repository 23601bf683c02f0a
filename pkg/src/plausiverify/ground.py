"""RANSAC ground-plane estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, NoGroundFoundError

# Reject candidate planes steeper than 60 deg from horizontal.
MIN_UP_COMPONENT = 0.5


@dataclass(frozen=True)
class GroundPlane:
    """Plane a*x + b*y + c*z = d with unit normal (a, b, c), c > 0."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = np.array([self.a, self.b, self.c], dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise DegenerateInputError("plane normal has zero norm")
        sign = 1.0 if n[2] > 0 else -1.0
        n = sign * n / norm
        d = sign * self.d / norm
        if n[2] <= MIN_UP_COMPONENT:
            raise DegenerateInputError(
                f"plane is {np.degrees(np.arccos(abs(n[2]))):.0f} deg from "
                "horizontal; not a ground plane")
        object.__setattr__(self, "a", float(n[0]))
        object.__setattr__(self, "b", float(n[1]))
        object.__setattr__(self, "c", float(n[2]))
        object.__setattr__(self, "d", float(d))


@dataclass(frozen=True)
class RansacConfig:
    iters: int = 200
    inlier_tol: float = 0.05
    min_inliers: int = 50
    seed: int = 0
    max_z: float | None = None  # drop candidate points at or above this height


def ground_height(g: GroundPlane, x, y):
    """Ground elevation z at (x, y): (d - a*x - b*y) / c."""
    return (g.d - g.a * np.asarray(x) - g.b * np.asarray(y)) / g.c


def plane_normal(g: GroundPlane) -> np.ndarray:
    return np.array([g.a, g.b, g.c])


def signed_distance(g: GroundPlane, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    return pts @ plane_normal(g) - g.d


def _plane_through(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, float(n @ p0)


def _lstsq_plane(pts):
    """Total least squares: centroid + smallest singular direction."""
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    n = vt[-1]
    return n, float(n @ centroid)


def fit_ransac(points, cfg: RansacConfig = RansacConfig()) -> GroundPlane:
    """Seeded RANSAC plane fit with a least-squares refit over the inliers.

    Candidate planes steeper than 60 deg are skipped; the refit plane is only
    kept if it does not lose inliers. Raises NoGroundFoundError when the
    inlier quorum is not met.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if cfg.max_z is not None:
        pts = pts[pts[:, 2] < cfg.max_z]
    n_pts = len(pts)
    if n_pts < 3:
        raise NoGroundFoundError(f"only {n_pts} candidate points")

    if n_pts == 3:
        fit = _plane_through(*pts)
        if fit is None:
            raise NoGroundFoundError("3 candidate points are collinear")
        return GroundPlane(*fit[0], fit[1])

    rng = np.random.default_rng(cfg.seed)
    best_count = 0
    best = None
    for _ in range(cfg.iters):
        idx = rng.choice(n_pts, 3, replace=False)
        fit = _plane_through(*pts[idx])
        if fit is None:
            continue
        n, d = fit
        if abs(n[2]) <= MIN_UP_COMPONENT:
            continue
        count = int(np.count_nonzero(np.abs(pts @ n - d) <= cfg.inlier_tol))
        if count > best_count:  # strict: ties keep the earlier iteration
            best_count = count
            best = (n, d)

    if best is None or best_count < cfg.min_inliers:
        raise NoGroundFoundError(
            f"best hypothesis has {best_count} inliers < {cfg.min_inliers}")

    n, d = best
    inliers = pts[np.abs(pts @ n - d) <= cfg.inlier_tol]
    n_ref, d_ref = _lstsq_plane(inliers)
    refit_count = int(np.count_nonzero(np.abs(pts @ n_ref - d_ref)
                                       <= cfg.inlier_tol))
    if refit_count >= best_count and abs(n_ref[2]) > MIN_UP_COMPONENT:
        n, d = n_ref, d_ref
    return GroundPlane(*n, d)
