"""Frame localization: embeddings -> routing -> offsets -> pairs -> robust pose -> metrics."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..image.grid import GridHierarchy
from ..matcher import (
    CorrespondenceSet,
    MatchConfig,
    RouteState,
    extract_correspondences,
    predict_offset,
    route_vertices,
)
from ..numcore import Tensor, parameter
from ..pose.metrics import FrameMetrics, frame_metrics
from ..pose.ransac import SolverConfig, ransac_pose
from ..scene.camera import PinholeCamera, RigidTransform
from ..scene.frames import FrameRecord
from ..scene.mesh import TriangleMesh
from ..training.ground_truth import GroundTruth, generate_ground_truth

CACHE_MAGIC = b"MLDC"
CACHE_VERSION = 1


class CacheError(ValueError):
    pass


@dataclass
class DescriptorCache:
    """Per-vertex descriptors of one mesh under one checkpoint."""

    descriptors: np.ndarray  # V x W
    split: tuple
    mesh_digest: str
    checkpoint_digest: str

    def levels(self) -> list[np.ndarray]:
        b = np.cumsum((0,) + tuple(self.split))
        return [self.descriptors[:, lo:hi] for lo, hi in zip(b[:-1], b[1:])]


def save_descriptor_cache(path, cache: DescriptorCache) -> None:
    V, W = cache.descriptors.shape
    head = CACHE_MAGIC + struct.pack("<I", CACHE_VERSION)
    for digest in (cache.mesh_digest, cache.checkpoint_digest):
        raw = digest.encode()
        head += struct.pack("<I", len(raw)) + raw
    head += struct.pack("<I", len(cache.split)) + struct.pack(f"<{len(cache.split)}I", *cache.split)
    head += struct.pack("<QQ", V, W)
    Path(path).write_bytes(head + np.ascontiguousarray(cache.descriptors, dtype="<f8").tobytes())


def load_descriptor_cache(path) -> DescriptorCache:
    buf = Path(path).read_bytes()
    if buf[:4] != CACHE_MAGIC:
        raise CacheError(f"{path}: not a descriptor cache")
    pos = 4
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    digests = []
    for _ in range(2):
        (n,) = struct.unpack_from("<I", buf, pos)
        digests.append(buf[pos + 4:pos + 4 + n].decode())
        pos += 4 + n
    (k,) = struct.unpack_from("<I", buf, pos)
    split = struct.unpack_from(f"<{k}I", buf, pos + 4)
    pos += 4 + 4 * k
    V, W = struct.unpack_from("<QQ", buf, pos)
    pos += 16
    if len(buf) - pos != V * W * 8 or sum(split) != W:
        raise CacheError(f"{path}: truncated or inconsistent cache")
    data = np.frombuffer(buf, dtype="<f8", count=V * W, offset=pos).reshape(V, W).copy()
    data.flags.writeable = False
    return DescriptorCache(data, tuple(split), digests[0], digests[1])


# ----------------------------------------------------------------------
# oracle embeddings


def oracle_match_params(n_levels: int, width: int, dtype=np.float64) -> dict[str, Tensor]:
    """Confidence heads that accept exact matches (sigmoid(5)) and reject anything else."""
    p = {}
    for lv in range(n_levels):
        p[f"match.conf{lv}.W"] = parameter(np.full(width, -50.0), dtype=dtype)
        p[f"match.conf{lv}.b"] = parameter(np.array([5.0]), dtype=dtype)
    return p


def oracle_embeddings(gt: GroundTruth, grid: GridHierarchy, width: int = 8, seed: int = 0):
    """Distinct random cell embeddings and vertex descriptors copied from each true cell.

    Invisible vertices get descriptors far from every cell so the
    whole-image test rejects them.
    """
    rng = np.random.default_rng(seed)
    cells = [rng.normal(0, 1, (grid[lv].count, width)) for lv in range(grid.n_levels)]
    desc = []
    for lv in range(grid.n_levels):
        e = np.full((gt.n_vertices, width), 10.0) + cells[lv][0]
        vis = gt.visible
        e[vis] = cells[lv][gt.cells[vis, lv]]
        desc.append(e)
    return desc, cells


# ----------------------------------------------------------------------
# localization


@dataclass
class LocalizeResult:
    pose: RigidTransform | None
    metrics: FrameMetrics
    correspondences: CorrespondenceSet
    routes: RouteState
    routing_accuracy: float | None = None


def routing_accuracy(routes: RouteState, gt: GroundTruth) -> float:
    """Fraction of visible vertices whose final surviving cells are exactly the true cell."""
    vis = gt.visible_ids()
    if len(vis) == 0:
        return float("nan")
    fin = routes.final()
    good = np.zeros(gt.n_vertices, dtype=bool)
    wrong = np.zeros(gt.n_vertices, dtype=bool)
    hit = fin.cell == gt.cells[fin.vertex, -1]
    good[fin.vertex[hit]] = True
    wrong[fin.vertex[~hit]] = True
    return float(np.mean(good[vis] & ~wrong[vis]))


def static_targets(mesh: TriangleMesh) -> np.ndarray:
    return mesh.positions[mesh.static]


def localize_frame(frame: FrameRecord, mesh: TriangleMesh, cam: PinholeCamera, grid: GridHierarchy,
                   descriptors, cells, match_params, beams, threshold: float, offsets_fn,
                   solver: SolverConfig = SolverConfig(), depth_sampling: str = "nearest") -> tuple[RigidTransform | None, CorrespondenceSet, RouteState]:
    """Geometric back end shared by the learned and oracle modes.

    ``offsets_fn(routes)`` returns one (x, y) offset per final candidate.
    """
    routes = route_vertices(descriptors, cells, grid, match_params, beams, threshold)
    offsets = offsets_fn(routes) if len(routes.final()) else np.zeros((0, 2))
    corr = extract_correspondences(routes, offsets, frame.depth, cam, mesh, grid, depth_sampling)
    targets = static_targets(mesh)
    res = ransac_pose(corr, solver, icp_targets=targets if len(targets) else None) if len(corr) >= 3 else None
    return (res.transform if res is not None else None), corr, routes


def run_localize(mesh: TriangleMesh, frame: FrameRecord, cam: PinholeCamera, grid: GridHierarchy, mode: str = "learned",
                 model=None, descriptors=None, solver: SolverConfig = SolverConfig(), depth_sampling: str | None = None,
                 gt_positions=None, oracle_seed: int = 0) -> LocalizeResult:
    """Localize one frame against a world-frame map mesh and score it.

    ``learned`` mode needs ``model`` (and optionally cached per-level
    ``descriptors``).  ``oracle`` mode builds embeddings from the frame's
    ground truth, so only the geometric path is exercised; it uses planar
    depth sampling unless told otherwise.  ``gt_positions`` gives vertex
    positions as they appear in the frame (moved dynamic objects); the map
    positions are used when omitted.  A missing pose is reported as a NaN
    frame, never raised.
    """
    gt = None
    if mode == "oracle":
        gt = generate_ground_truth(mesh.positions if gt_positions is None else gt_positions, frame.pose, cam,
                                   frame.depth, grid)
        desc, cells = oracle_embeddings(gt, grid, seed=oracle_seed)
        params = oracle_match_params(grid.n_levels, desc[0].shape[1])
        beams = MatchConfig().beams

        def offsets_fn(routes):
            return gt.offsets[routes.final().vertex]

        sampling = depth_sampling or "planar"
        threshold = 0.5
    elif mode == "learned":
        if model is None:
            raise ValueError("learned mode needs a model")
        if descriptors is None:
            descriptors = model.embed_mesh(mesh).arrays()
        cells_t = model.embed_frame(frame, grid, training=False).levels
        cells = [c.data for c in cells_t]
        desc = [np.asarray(d) for d in descriptors]
        params = model.params
        beams = model.cfg.match.beams
        threshold = model.cfg.match.threshold

        def offsets_fn(routes):
            fin = routes.final()
            return predict_offset(cells[-1][fin.cell], desc[-1][fin.vertex], params).data

        sampling = depth_sampling or model.cfg.match.depth_sampling
    else:
        raise ValueError(f"unknown mode {mode!r}")
    pose, corr, routes = localize_frame(frame, mesh, cam, grid, desc, cells, params, beams, threshold, offsets_fn,
                                        solver, sampling)
    metrics = frame_metrics(pose, frame.pose, frame.depth, cam, frame.frame_id)
    acc = routing_accuracy(routes, gt) if gt is not None else None
    return LocalizeResult(pose, metrics, corr, routes, acc)
