"""Photometric frame augmentation and random mesh rotation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.transform import Rotation

from ..scene.frames import FrameRecord
from ..scene.mesh import TriangleMesh


@dataclass(frozen=True)
class AugmentConfig:
    strength: float = 1.0
    blur_sigma: float = 1.5  # px, upper bound
    noise_sigma: float = 0.02  # upper bound
    contrast: float = 0.2  # +- fraction
    brightness: float = 0.05  # +- offset
    rot_z_deg: float = 180.0
    rot_xy_deg: float = 5.0

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("augmentation strength must be >= 0")


def augment_image(rgb: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    s = cfg.strength
    sigma = rng.uniform(0, cfg.blur_sigma) * s
    gain = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast) * s
    shift = rng.uniform(-cfg.brightness, cfg.brightness) * s
    noise = rng.uniform(0, cfg.noise_sigma) * s
    if s == 0:
        return rgb.copy()
    out = gaussian_filter(rgb, sigma=(sigma, sigma, 0)) if sigma > 0 else rgb.copy()
    out = (out - 0.5) * gain + 0.5 + shift
    out = out + rng.normal(0, 1, out.shape) * noise
    return np.clip(out, 0.0, 1.0)


def random_rotation(cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    s = cfg.strength
    rz = rng.uniform(-cfg.rot_z_deg, cfg.rot_z_deg) * s
    rx, ry = rng.uniform(-cfg.rot_xy_deg, cfg.rot_xy_deg, 2) * s
    return Rotation.from_euler("zyx", [rz, ry, rx], degrees=True).as_matrix()


def rotate_mesh(mesh: TriangleMesh, R: np.ndarray) -> TriangleMesh:
    return mesh.with_positions(mesh.positions @ R.T, mesh.normals @ R.T)


def augment_sample(frame: FrameRecord, mesh: TriangleMesh, stage: int, seed: int,
                   cfg: AugmentConfig = AugmentConfig()) -> tuple[FrameRecord, TriangleMesh]:
    """Image jitter in every stage; mesh rotation in stage 1 only.

    Only the network inputs change: depth, pose and vertex identities are
    untouched, so ground truth computed from the original pair stays valid.
    """
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    rng = np.random.default_rng(seed)
    rgb = augment_image(frame.rgb, cfg, rng)
    R = random_rotation(cfg, rng)
    if stage == 1 and cfg.strength > 0:
        mesh = rotate_mesh(mesh, R)
    return frame.replace(rgb=rgb), mesh
