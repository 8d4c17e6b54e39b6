"""Closed-form rigid alignment of matched 3D point sets."""

from __future__ import annotations

import numpy as np

from ..scene.camera import RigidTransform


class DegenerateConfiguration(ValueError):
    """Raised when matched points do not span a plane."""


def kabsch_batch(world: np.ndarray, camera: np.ndarray, rank_tol: float = 1e-9):
    """Rotations and translations with R @ world + t ~ camera for stacked sets.

    ``world`` and ``camera`` are (B, n, 3).  Returns (R (B,3,3), t (B,3),
    ok (B,)) where ``ok`` is False for sets whose spread has rank < 2.
    """
    world, camera = np.asarray(world, float), np.asarray(camera, float)
    qw = world.mean(axis=1, keepdims=True)
    pc = camera.mean(axis=1, keepdims=True)
    A, C = world - qw, camera - pc
    Hm = np.einsum("bni,bnj->bij", A, C)
    U, S, Vt = np.linalg.svd(Hm)
    d = np.sign(np.linalg.det(np.einsum("bji,bkj->bik", Vt, U)))
    d[d == 0] = 1.0
    D = np.ones((len(Hm), 3))
    D[:, 2] = d
    R = np.einsum("bji,bj,bkj->bik", Vt, D, U)
    t = pc[:, 0] - np.einsum("bij,bj->bi", R, qw[:, 0])
    sw = np.linalg.svd(A, compute_uv=False)
    sc = np.linalg.svd(C, compute_uv=False)
    ok = (sw[:, 1] > rank_tol * np.maximum(sw[:, 0], 1e-300)) & (sc[:, 1] > rank_tol * np.maximum(sc[:, 0], 1e-300))
    return R, t, ok


def kabsch_align(camera_pts, world_pts, rank_tol: float = 1e-9) -> RigidTransform:
    """World-to-camera transform minimizing sum ||R q_w + t - p_c||^2."""
    camera_pts = np.asarray(camera_pts, dtype=np.float64)
    world_pts = np.asarray(world_pts, dtype=np.float64)
    if camera_pts.shape != world_pts.shape or camera_pts.ndim != 2 or camera_pts.shape[1] != 3:
        raise ValueError(f"expected two matching (n, 3) arrays, got {camera_pts.shape} and {world_pts.shape}")
    if len(camera_pts) < 3:
        raise DegenerateConfiguration(f"need at least 3 pairs, got {len(camera_pts)}")
    R, t, ok = kabsch_batch(world_pts[None], camera_pts[None], rank_tol)
    if not ok[0]:
        raise DegenerateConfiguration("points are collinear or coincident")
    return RigidTransform(R[0], t[0])
