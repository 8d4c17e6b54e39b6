from .icp import IcpConfig, IcpResult, SpatialHash, icp_objective, icp_refine, nearest_exhaustive
from .kabsch import DegenerateConfiguration, kabsch_align, kabsch_batch
from .metrics import (
    TABLE_COLUMNS,
    BenchmarkRecord,
    FrameMetrics,
    aggregate_metrics,
    dcre_of_frame,
    format_table,
    frame_metrics,
    pose_error,
    rotation_angle_deg,
    score_from,
)
from .ransac import PoseHypothesis, RansacResult, SolverConfig, far_enough, ransac_pose, rigid_check, sample_triples, score_hypothesis
