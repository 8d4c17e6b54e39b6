from .augment import AugmentConfig, augment_image, augment_sample, random_rotation, rotate_mesh
from .ground_truth import GroundTruth, generate_ground_truth, occlusion_tolerance
from .losses import (
    LossParts,
    LossWeights,
    bce,
    confidence_loss,
    confidence_targets,
    hit_mask,
    norm_loss,
    offset_loss,
    similarity_loss,
    total_loss,
)
from .trainer import (
    EpochStats,
    FrameOutcome,
    SceneDataset,
    TrainingError,
    frame_loss,
    level_hits,
    run_schedule,
    schedule_optimizer,
    train_epoch,
)
