"""The three networks as one parameter bundle, with checkpoint IO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig, config_from_dict
from .gnn import VertexDescriptorSet, embed_vertices
from .gnn import init_gnn_params
from .image.cnn import CellEmbeddingSet, embed_image, init_cnn_params, init_position_params, prepare_rgbd
from .image.grid import GridHierarchy, build_grid_hierarchy
from .matcher import init_match_params
from .numcore import Tensor, load_checkpoint, parameter, save_checkpoint
from .numcore.checkpoint import CheckpointError
from .scene.frames import FrameRecord
from .scene.mesh import NormalizationParams, TriangleMesh, normalize_mesh


@dataclass
class Model:
    cfg: RunConfig
    params: dict
    buffers: dict

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    @property
    def grid(self) -> GridHierarchy:
        g = self.cfg.grid
        return build_grid_hierarchy(g.width, g.height, g.levels)

    def group(self, prefix: str) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def embed_mesh(self, mesh: TriangleMesh, norm: NormalizationParams | None = None, graph=None) -> VertexDescriptorSet:
        """Descriptors of a world-frame mesh (normalized here)."""
        normed, _ = normalize_mesh(mesh, norm)
        return embed_vertices(normed, self.cfg.gnn, self.params, graph)

    def embed_frame(self, frame: FrameRecord, grid: GridHierarchy | None = None, training: bool = False) -> CellEmbeddingSet:
        x = prepare_rgbd(frame.rgb, frame.depth, self.cfg.cnn.depth_max, self.dtype)
        return embed_image(x, grid or self.grid, self.cfg.cnn, self.params, self.buffers, training)

    def copy(self) -> "Model":
        params = {k: parameter(v.data.copy(), dtype=v.data.dtype) for k, v in self.params.items()}
        buffers = {k: {n: (a.copy() if isinstance(a, np.ndarray) else a) for n, a in b.items()}
                   for k, b in self.buffers.items()}
        return Model(self.cfg, params, buffers)


def init_model(cfg: RunConfig, seed: int | None = None) -> Model:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dtype = np.dtype(cfg.dtype)
    params: dict[str, Tensor] = {}
    params.update(init_gnn_params(cfg.gnn, rng, dtype))
    cnn_params, buffers = init_cnn_params(cfg.cnn, rng, dtype)
    params.update(cnn_params)
    g = cfg.grid
    params.update(init_position_params(cfg.cnn, build_grid_hierarchy(g.width, g.height, g.levels), dtype))
    params.update(init_match_params(cfg.cnn.head_widths, rng, dtype))
    for name, p in params.items():
        p.name = name
    return Model(cfg, params, buffers)


def save_model(path, model: Model, extra: dict | None = None) -> None:
    tensors = {k: v.data.astype(np.float64) for k, v in model.params.items()}
    for layer, buf in model.buffers.items():
        for stat in ("mean", "var"):
            tensors[f"buffer:{layer}.{stat}"] = np.asarray(buf[stat], dtype=np.float64)
    meta = {"config": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    save_checkpoint(path, tensors, meta)


def load_model(path) -> tuple[Model, dict]:
    tensors, meta = load_checkpoint(path)
    if "config" not in meta:
        raise CheckpointError(f"{path}: checkpoint has no model configuration")
    cfg = config_from_dict(meta["config"])
    model = init_model(cfg)
    missing = sorted(set(model.params) - set(tensors))
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing[:5]}")
    for k, p in model.params.items():
        if tensors[k].shape != p.shape:
            raise CheckpointError(f"{path}: tensor {k} has shape {tensors[k].shape}, expected {p.shape}")
        p.data[...] = tensors[k]
    for layer, buf in model.buffers.items():
        for stat in ("mean", "var"):
            buf[stat] = tensors[f"buffer:{layer}.{stat}"].copy()
    return model, meta
