"""In-memory scene container consumed by the verification pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel


@dataclass(frozen=True)
class Scene:
    """One measurement frame: point cloud, camera, instance masks.

    `points` are ego-frame (N, 3); `masks` are full-resolution boolean
    images, one per segmented instance; `sensor_origin` is the lidar
    position in the ego frame.
    """

    points: np.ndarray
    cam: CameraModel
    masks: list = field(default_factory=list)
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "points",
                           np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "sensor_origin",
                           np.asarray(self.sensor_origin, dtype=np.float64))
