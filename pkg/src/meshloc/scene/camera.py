"""Pinhole cameras and rigid transforms.

Poses are world-to-camera throughout: ``X_cam = R @ X_world + t``.  Camera
space has +x right, +y down and +z along the optical axis.  Pixel
coordinates are continuous; pixel (i, j) covers [i, i+1) x [j, j+1), so its
center sits at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def resized(self, width: int, height: int) -> "PinholeCamera":
        sx, sy = width / self.width, height / self.height
        return PinholeCamera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)


def transform_points(T: RigidTransform, points) -> np.ndarray:
    return T.apply(points)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """World-to-camera pose of a camera at ``eye`` looking at ``target``."""
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return RigidTransform(R, -R @ eye)


def project_points(cam: PinholeCamera, T: RigidTransform, X_world) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection: returns (uv, depth, valid).

    ``valid`` is False for points at or behind the camera and for points
    whose pixel falls outside [0, width) x [0, height).
    """
    Xc = T.apply(np.atleast_2d(X_world))
    z = Xc[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = cam.fx * Xc[:, 0] / zs + cam.cx
    v = cam.fy * Xc[:, 1] / zs + cam.cy
    inside = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return np.stack([u, v], axis=1), z, inside


def project_point(cam: PinholeCamera, T: RigidTransform, X_world):
    """(u, v, depth) for one world point, or None when it is not imaged."""
    uv, z, ok = project_points(cam, T, np.asarray(X_world, dtype=np.float64).reshape(1, 3))
    if not ok[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0])


def backproject_pixels(cam: PinholeCamera, u, v, depth) -> np.ndarray:
    u, v, depth = (np.asarray(a, dtype=np.float64) for a in (u, v, depth))
    if np.any(depth <= 0):
        raise ValueError("depth must be positive")
    return np.stack([(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth], axis=-1)


def backproject_pixel(cam: PinholeCamera, u: float, v: float, depth: float) -> np.ndarray:
    if depth <= 0:
        raise ValueError(f"invalid depth {depth} at pixel ({u}, {v})")
    return backproject_pixels(cam, u, v, depth)
