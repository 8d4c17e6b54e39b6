"""Robust pose from 3D-3D pairs: sampled minimal sets, admission tests, static scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene.camera import RigidTransform
from .icp import IcpConfig, IcpResult, icp_refine
from .kabsch import kabsch_batch


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 1024
    far: float = 0.1
    rigid: float = 0.05
    score_eps: float = 1e-12
    refine: bool = True
    icp: IcpConfig = field(default_factory=IcpConfig)
    seed: int = 0
    chunk: int = 256  # hypotheses scored per block

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.far <= 0 or self.rigid <= 0 or self.score_eps <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class PoseHypothesis:
    transform: RigidTransform
    score: float


@dataclass
class RansacResult:
    hypothesis: PoseHypothesis
    admitted: int
    icp: IcpResult | None = None

    @property
    def transform(self) -> RigidTransform:
        return self.hypothesis.transform


def _pair_dists(P: np.ndarray) -> np.ndarray:
    """(..., 3) distances |p0-p1|, |p0-p2|, |p1-p2| for (..., 3, 3) triples."""
    return np.stack([np.linalg.norm(P[..., 0, :] - P[..., 1, :], axis=-1),
                     np.linalg.norm(P[..., 0, :] - P[..., 2, :], axis=-1),
                     np.linalg.norm(P[..., 1, :] - P[..., 2, :], axis=-1)], axis=-1)


def far_enough(camera_pts, far: float) -> bool:
    """All three camera-space pairwise distances are at least ``far``."""
    P = np.asarray(camera_pts, dtype=np.float64)
    if P.shape != (3, 3):
        raise ValueError(f"expected 3 points, got {P.shape}")
    return bool(np.all(_pair_dists(P) >= far))


def rigid_check(camera_pts, world_pts, tol: float) -> bool:
    """Pairwise distances agree between the two spaces within ``tol``."""
    C, Wp = np.asarray(camera_pts, float), np.asarray(world_pts, float)
    if C.shape != (3, 3) or Wp.shape != (3, 3):
        raise ValueError("expected two sets of 3 points")
    return bool(np.all(np.abs(_pair_dists(C) - _pair_dists(Wp)) <= tol))


def _static_mse(R: np.ndarray, t: np.ndarray, cam: np.ndarray, world: np.ndarray) -> np.ndarray:
    # camera -> world through the inverse transform: R^T (p - t)
    X = np.einsum("bji,bnj->bni", R, cam[None] - t[:, None, :])
    return ((X - world[None]) ** 2).sum(-1).mean(-1)


def score_hypothesis(M: RigidTransform, corr, eps: float = 1e-12) -> float:
    """1 / (MSE of static pairs mapped into the world + eps); 0 without static pairs."""
    s = np.asarray(corr.static, dtype=bool)
    if not np.any(s):
        return 0.0
    mse = _static_mse(M.rotation[None], M.translation[None], corr.camera[s], corr.world[s])[0]
    return float(1.0 / (mse + eps))


def sample_triples(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """``count`` uniformly drawn triples of distinct indices in [0, n)."""
    a = rng.integers(0, n, count)
    b = rng.integers(0, n - 1, count)
    b = b + (b >= a)
    c = rng.integers(0, n - 2, count)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def ransac_pose(corr, config: SolverConfig = SolverConfig(), icp_targets=None) -> RansacResult | None:
    """Best admitted hypothesis after ``config.iterations`` sampled triples.

    A triple is admitted when its camera points are pairwise at least
    ``far`` apart and its distances agree across spaces within ``rigid``.
    Admitted triples are solved in closed form and scored on the static
    pairs; the winner (first one on ties) is refined by ICP of the static
    camera points against ``icp_targets`` (the static map geometry).  With
    no targets the hypothesis is returned unrefined.  Returns None when
    fewer than 3 pairs exist or nothing was admitted.
    """
    n = len(corr.world)
    if n < 3:
        return None
    rng = np.random.default_rng(config.seed)
    tri = sample_triples(rng, n, config.iterations)
    C, Wp = corr.camera[tri], corr.world[tri]
    dc, dw = _pair_dists(C), _pair_dists(Wp)
    admit = np.all(dc >= config.far, axis=1) & np.all(np.abs(dc - dw) <= config.rigid, axis=1)
    R, t, ok = kabsch_batch(Wp[admit], C[admit]) if admit.any() else (None, None, np.zeros(0, bool))
    if not np.any(ok):
        return None
    R, t = R[ok], t[ok]
    s = np.asarray(corr.static, dtype=bool)
    if np.any(s):
        cam_s, world_s = corr.camera[s], corr.world[s]
        mse = np.concatenate([_static_mse(R[i:i + config.chunk], t[i:i + config.chunk], cam_s, world_s)
                              for i in range(0, len(R), config.chunk)])
        scores = 1.0 / (mse + config.score_eps)
    else:
        scores = np.zeros(len(R))
    best = int(np.argmax(scores))
    T = RigidTransform(R[best], t[best])
    result = RansacResult(PoseHypothesis(T, float(scores[best])), int(ok.sum()))
    if config.refine and icp_targets is not None and np.any(s):
        result.icp = icp_refine(T, corr.camera[s], icp_targets, config.icp)
        T = result.icp.transform
        result.hypothesis = PoseHypothesis(T, score_hypothesis(T, corr, config.score_eps))
    return result
