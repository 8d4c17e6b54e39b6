from .camera import (
    PinholeCamera,
    RigidTransform,
    backproject_pixel,
    backproject_pixels,
    look_at,
    project_point,
    project_points,
    transform_points,
)
from .mesh import (
    FEATURE_SLOTS,
    MeshFormatError,
    MeshGraph,
    NormalizationParams,
    PaletteEntry,
    SemanticPalette,
    TriangleMesh,
    build_adjacency,
    load_mesh,
    normalize_mesh,
    save_mesh,
    vertex_normals,
)
from .poses import PoseFormatError, read_estimates, read_trajectory, write_estimates, write_trajectory
from .frames import FrameRecord
