"""Per-frame loss assembly, epochs and the staged training schedule."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..image.grid import GridHierarchy
from ..matcher import RouteState, confidence_of, predict_offset, route_vertices
from ..numcore import Adam, backward, getitem
from ..scene.camera import PinholeCamera
from ..scene.frames import FrameRecord
from ..scene.mesh import MeshGraph, TriangleMesh
from .augment import AugmentConfig, augment_sample
from .ground_truth import GroundTruth, generate_ground_truth
from .losses import LossParts, LossWeights, confidence_loss, norm_loss, offset_loss, similarity_loss, total_loss


class TrainingError(RuntimeError):
    def __init__(self, message: str, frame_id: str | None = None):
        super().__init__(message)
        self.frame_id = frame_id


@dataclass
class SceneDataset:
    """A world-frame mesh, its frames and the supervision derived from them."""

    mesh: TriangleMesh
    frames: list
    camera: PinholeCamera
    grid: GridHierarchy
    graph: MeshGraph = None
    truths: list = field(default_factory=list)

    @classmethod
    def build(cls, mesh: TriangleMesh, frames, camera: PinholeCamera, grid: GridHierarchy) -> "SceneDataset":
        frames = list(frames)
        for fr in frames:
            if (fr.width, fr.height) != (grid.width, grid.height):
                raise ValueError(f"frame {fr.frame_id} is {fr.width}x{fr.height}, grid is {grid.width}x{grid.height}")
        truths = [generate_ground_truth(mesh.positions, fr.pose, camera, fr.depth, grid) for fr in frames]
        return cls(mesh, frames, camera, grid, MeshGraph.from_mesh(mesh), truths)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class FrameOutcome:
    parts: LossParts
    total: object  # scalar Tensor
    routes: RouteState
    hits: int
    survivors: int


def frame_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def level_hits(routes: RouteState, gt: GroundTruth) -> tuple[int, int]:
    """(surviving final-level vertices whose kept cells include the true cell, all surviving vertices)."""
    fin = routes.final()
    if len(fin) == 0:
        return 0, 0
    ok = gt.visible[fin.vertex] & (fin.cell == gt.cells[fin.vertex, -1])
    surv = np.unique(fin.vertex)
    return len(np.unique(fin.vertex[ok])), len(surv)


def frame_loss(model, data: SceneDataset, index: int, weights: LossWeights, frame: FrameRecord | None = None,
               mesh: TriangleMesh | None = None, training: bool = True, routes: RouteState | None = None) -> FrameOutcome:
    """All four loss terms for one frame; routing runs on detached values.

    Passing ``routes`` reuses a fixed routing, which makes the loss smooth in
    the parameters (finite-difference checks need this).
    """
    frame = frame or data.frames[index]
    mesh = mesh or data.mesh
    gt = data.truths[index]
    desc = model.embed_mesh(mesh, graph=data.graph).levels()
    cells = model.embed_frame(frame, data.grid, training).levels
    mcfg = model.cfg.match
    if routes is None:
        routes = route_vertices([d.data for d in desc], [c.data for c in cells], data.grid, model.params,
                                mcfg.beams, mcfg.threshold)
    confs = []
    for lv, lc in enumerate(routes.levels):
        f = getitem(cells[lv], lc.cell)
        e = getitem(desc[lv], lc.vertex)
        confs.append(confidence_of(f, e, lv, model.params))
    fin = routes.final()
    pred = predict_offset(getitem(cells[-1], fin.cell), getitem(desc[-1], fin.vertex), model.params)
    l_off, empty = offset_loss(pred, gt, routes)
    parts = LossParts(confidence_loss(confs, gt, routes), similarity_loss(desc, cells, gt, data.grid, weights),
                      l_off, norm_loss(desc, cells), empty)
    hits, surv = level_hits(routes, gt)
    return FrameOutcome(parts, total_loss(parts, weights), routes, hits, surv)


@dataclass
class EpochStats:
    stage: int
    epoch: int
    total: float
    confidence: float
    similarity: float
    offset: float
    norm: float
    hit_rate: float
    frames: int
    skipped: int
    seconds: float

    COLUMNS = ("stage", "epoch", "total", "confidence", "similarity", "offset", "norm", "hit_rate", "frames",
               "skipped", "seconds")

    def row(self) -> str:
        vals = [getattr(self, c) for c in self.COLUMNS]
        return "\t".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in vals)


def train_epoch(data: SceneDataset, model, optimizer: Adam, stage, seed: int, weights: LossWeights = LossWeights(),
                augment: AugmentConfig = AugmentConfig(), epoch: int = 0) -> EpochStats:
    """One pass over the frames in a seeded order with an optimizer step per frame.

    ``stage`` is a :class:`~meshloc.config.TrainStage`; its strengths scale
    the photometric jitter and (stage 1 only) the mesh rotation.
    """
    t0 = time.perf_counter()
    order = np.random.default_rng(frame_seed(seed, stage.stage, epoch)).permutation(len(data))
    sums = dict(total=0.0, confidence=0.0, similarity=0.0, offset=0.0, norm=0.0)
    hits = surv = 0
    skipped_before = optimizer.skipped
    optimizer.lr = stage.lr
    for i in order:
        fr = data.frames[i]
        img_cfg = replace(augment, strength=augment.strength * stage.image_augment)
        mesh_cfg = replace(augment, strength=augment.strength * stage.mesh_augment)
        s = frame_seed(seed, stage.stage, epoch, int(i))
        frame, _ = augment_sample(fr, data.mesh, stage.stage, s, img_cfg)
        _, mesh = augment_sample(fr, data.mesh, stage.stage, s, mesh_cfg)
        out = frame_loss(model, data, int(i), weights, frame, mesh, training=True)
        value = out.total.item()
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss on frame {fr.frame_id}", fr.frame_id)
        grads = backward(out.total, model.params)
        optimizer.step(model.params, grads)
        sums["total"] += value
        for k, v in out.parts.values().items():
            sums[k] += v
        hits += out.hits
        surv += out.survivors
    n = max(len(data), 1)
    return EpochStats(stage.stage, epoch, sums["total"] / n, sums["confidence"] / n, sums["similarity"] / n,
                      sums["offset"] / n, sums["norm"] / n, hits / surv if surv else 0.0, len(data),
                      optimizer.skipped - skipped_before, time.perf_counter() - t0)


def schedule_optimizer(schedule) -> Adam:
    """Adam with the schedule's matcher-head learning-rate multiplier."""
    return Adam(lr_scale={"match.": schedule.head_lr_scale} if schedule.head_lr_scale != 1.0 else {})


def run_schedule(datasets, model, schedule, weights: LossWeights = LossWeights(), augment: AugmentConfig = AugmentConfig(),
                 seed: int = 0, log_path=None, optimizer: Adam | None = None, on_epoch=None) -> list[EpochStats]:
    """Run the stages in order.

    Stages 1 and 2 cycle over all ``datasets``; stage 3 refines on a single
    scene and rejects more than one.  A tab-separated log line is written
    per epoch when ``log_path`` is given.
    """
    datasets = list(datasets)
    optimizer = optimizer or schedule_optimizer(schedule)
    history: list[EpochStats] = []
    log = None
    if log_path is not None:
        log = Path(log_path).open("w")
        log.write("\t".join(EpochStats.COLUMNS) + "\n")
    try:
        epoch = 0
        for st in schedule.stages:
            if st.stage == 3 and len(datasets) != 1:
                raise TrainingError(f"stage 3 refines one scene, got {len(datasets)}")
            for _ in range(st.epochs):
                for k, data in enumerate(datasets):
                    stats = train_epoch(data, model, optimizer, st, frame_seed(seed, k), weights, augment, epoch)
                    history.append(stats)
                    if log:
                        log.write(stats.row() + "\n")
                        log.flush()
                    if on_epoch:
                        on_epoch(stats)
                epoch += 1
    finally:
        if log:
            log.close()
    return history
