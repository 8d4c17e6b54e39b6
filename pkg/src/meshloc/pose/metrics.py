"""Pose errors, dense reprojection error and benchmark aggregates."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..scene.camera import PinholeCamera, RigidTransform, backproject_pixels

POSE_T_MAX = 0.05  # scene units
POSE_R_MAX = 5.0  # degrees
OUTLIER_DCRE = 0.5
TABLE_COLUMNS = ("Score", "DCRE(0.05)", "DCRE(0.15)", "Pose(0.05m,5°)", "Outlier(0.5)", "NaN")


def rotation_angle_deg(R: np.ndarray) -> float:
    """Angle of a rotation matrix in degrees, accurate near 0 and 180."""
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.degrees(np.arctan2(np.linalg.norm(v), np.trace(R) - 1.0)))


def pose_error(T_est: RigidTransform, T_gt: RigidTransform) -> tuple[float, float]:
    """(camera-center distance, relative rotation angle in degrees)."""
    dt = float(np.linalg.norm(T_est.camera_center() - T_gt.camera_center()))
    return dt, rotation_angle_deg(T_gt.rotation.T @ T_est.rotation)


def dcre_of_frame(depth: np.ndarray, cam: PinholeCamera, T_est: RigidTransform, T_gt: RigidTransform):
    """Mean reprojection displacement of valid depth pixels over the image diagonal.

    Pixels are lifted with the true pose and re-imaged with the estimate;
    each displacement is capped at one diagonal, which also covers points
    that land behind the estimated camera.  Returns None without valid depth.
    """
    i, j = np.nonzero(depth > 0)
    if len(i) == 0:
        return None
    u, v = j + 0.5, i + 0.5
    Xw = T_gt.inverse().apply(backproject_pixels(cam, u, v, depth[i, j]))
    Xe = T_est.apply(Xw)
    diag = cam.diagonal
    z = Xe[:, 2]
    zs = np.where(z > 0, z, 1.0)
    du = cam.fx * Xe[:, 0] / zs + cam.cx - u
    dv = cam.fy * Xe[:, 1] / zs + cam.cy - v
    disp = np.where(z > 0, np.minimum(np.hypot(du, dv), diag), diag)
    return float(disp.mean() / diag)


@dataclass(frozen=True)
class FrameMetrics:
    translation: float = float("nan")
    rotation: float = float("nan")
    dcre: float | None = None
    has_prediction: bool = False
    frame_id: str = ""

    def pose_ok(self, t_max: float = POSE_T_MAX, r_max: float = POSE_R_MAX) -> bool:
        return self.has_prediction and self.translation <= t_max and self.rotation <= r_max


def frame_metrics(T_est: RigidTransform | None, T_gt: RigidTransform, depth, cam, frame_id="") -> FrameMetrics:
    if T_est is None:
        return FrameMetrics(frame_id=str(frame_id))
    dt, dr = pose_error(T_est, T_gt)
    return FrameMetrics(dt, dr, dcre_of_frame(depth, cam, T_est, T_gt), True, str(frame_id))


@dataclass(frozen=True)
class BenchmarkRecord:
    score: float
    dcre_05: float
    dcre_15: float
    pose: float
    outlier: float
    nan: float
    n_frames: int
    empty: bool = False

    def row(self) -> list[float]:
        return [self.score, self.dcre_05, self.dcre_15, self.pose, self.outlier, self.nan]

    def to_dict(self) -> dict:
        return asdict(self)


def score_from(dcre_05: float, outlier: float) -> float:
    return 1.0 + dcre_05 - outlier


def aggregate_metrics(frames, t_max: float = POSE_T_MAX, r_max: float = POSE_R_MAX) -> BenchmarkRecord:
    """Benchmark fractions over a list of :class:`FrameMetrics`.

    Pose and NaN use every frame.  DCRE fractions use every frame except
    predicted frames whose DCRE is undefined; frames without a prediction
    count as failures for DCRE(tau) but are not counted as outliers.
    """
    frames = list(frames)
    if not frames:
        return BenchmarkRecord(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, True)
    n = len(frames)
    pose = sum(f.pose_ok(t_max, r_max) for f in frames) / n
    nan = sum(not f.has_prediction for f in frames) / n
    pool = [f for f in frames if not (f.has_prediction and f.dcre is None)]
    m = len(pool)
    if m:
        d = np.array([f.dcre if f.has_prediction else np.nan for f in pool])
        with np.errstate(invalid="ignore"):
            d05, d15, out = float(np.mean(d <= 0.05)), float(np.mean(d <= 0.15)), float(np.mean(d > OUTLIER_DCRE))
    else:
        d05 = d15 = out = 0.0
    return BenchmarkRecord(score_from(d05, out), d05, d15, pose, out, nan, n)


def format_table(rows: dict, precision: int = 3) -> str:
    """Tab-separated table with one row per method name."""
    lines = ["\t".join(("Method",) + TABLE_COLUMNS)]
    for name, rec in rows.items():
        vals = rec.row() if isinstance(rec, BenchmarkRecord) else list(rec)
        lines.append("\t".join([name] + [f"{v:.{precision}f}" for v in vals]))
    return "\n".join(lines) + "\n"
