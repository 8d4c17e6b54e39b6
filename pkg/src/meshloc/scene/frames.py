"""RGB-D frame container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import RigidTransform


@dataclass(frozen=True)
class FrameRecord:
    """An RGB image in [0, 1], a depth map in scene units (0 = invalid) and its pose."""

    rgb: np.ndarray  # H x W x 3
    depth: np.ndarray  # H x W
    pose: RigidTransform  # world-to-camera
    configuration: int = 0
    frame_id: str = "0"

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be H x W x 3, got {self.rgb.shape}")
        if self.depth.shape != self.rgb.shape[:2]:
            raise ValueError(f"depth {self.depth.shape} does not match image {self.rgb.shape[:2]}")
        if np.any(self.depth < 0):
            raise ValueError("depth must be non-negative")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def replace(self, **changes) -> "FrameRecord":
        fields = dict(rgb=self.rgb, depth=self.depth, pose=self.pose, configuration=self.configuration,
                      frame_id=self.frame_id)
        fields.update(changes)
        return FrameRecord(**fields)
