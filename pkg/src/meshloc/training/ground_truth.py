"""Per-frame supervision derived from a known camera pose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..image.grid import GridHierarchy
from ..scene.camera import PinholeCamera, RigidTransform, project_points


@dataclass
class GroundTruth:
    visible: np.ndarray  # (V,) bool
    cells: np.ndarray  # (V, levels) int, -1 where invisible
    offsets: np.ndarray  # (V, 2), nan where invisible
    pixels: np.ndarray  # (V, 2), nan where invisible

    @property
    def n_vertices(self) -> int:
        return len(self.visible)

    def visible_ids(self) -> np.ndarray:
        return np.nonzero(self.visible)[0]


def occlusion_tolerance(z, rel: float = 0.02, floor: float = 0.01) -> np.ndarray:
    return np.maximum(rel * np.asarray(z), floor)


def generate_ground_truth(positions, pose: RigidTransform, cam: PinholeCamera, depth: np.ndarray,
                          grid: GridHierarchy, rel_tol: float = 0.02, abs_tol: float = 0.01) -> GroundTruth:
    """Visibility, cell path and final-level offset for every vertex.

    A vertex counts as visible when it projects inside the frame and its
    camera depth agrees with the depth map at the pixel containing the
    projection, within max(rel_tol * z, abs_tol).
    """
    positions = np.asarray(positions, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise ValueError(f"depth map {depth.shape} does not match camera {cam.height}x{cam.width}")
    uv, z, inside = project_points(cam, pose, positions)
    V = len(positions)
    visible = np.zeros(V, dtype=bool)
    idx = np.nonzero(inside)[0]
    if len(idx):
        i = np.floor(uv[idx, 1]).astype(np.int64)
        j = np.floor(uv[idx, 0]).astype(np.int64)
        d = depth[i, j]
        visible[idx] = (d > 0) & (np.abs(z[idx] - d) <= occlusion_tolerance(z[idx], rel_tol, abs_tol))
    cells = np.full((V, grid.n_levels), -1, dtype=np.int64)
    offsets = np.full((V, 2), np.nan)
    pixels = np.full((V, 2), np.nan)
    vis = np.nonzero(visible)[0]
    if len(vis):
        u, v = uv[vis, 0], uv[vis, 1]
        for lv in range(grid.n_levels):
            cells[vis, lv] = grid.locate(lv, u, v)
        last = grid[grid.n_levels - 1]
        origin = grid.cell_origin(grid.n_levels - 1, cells[vis, -1])
        offsets[vis] = (uv[vis] - origin) / np.array([last.cell_w, last.cell_h], dtype=np.float64)
        pixels[vis] = uv[vis]
    return GroundTruth(visible, cells, offsets, pixels)
