"""Darknet-style CNN producing one embedding per grid cell per level.

Layout: a 3x3 stem, then DarknetSets (a stride-2 3x3 ConvBN that halves the
resolution and doubles the channels, followed by N residual blocks of a 1x1
and a 3x3 ConvBN).  The stem output and every set output are candidate
feature maps; head ``l`` reads the map ``l`` steps before the final one,
average-resamples it to the level's rows x cols and projects channels to
the level width through a small two-layer prediction block.  With
``cell_position`` a learned per-cell table is added to each head's output,
giving shallow configurations the absolute-position signal that deep
zero-padded networks pick up on their own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import (
    Tensor,
    adaptive_avg_pool2d,
    apply_linear,
    batch_norm2d,
    conv2d,
    leaky_relu,
    parameter,
    reshape,
    transpose,
)
from .grid import GridHierarchy

DEFAULT_WIDTHS = (256, 128, 128, 64, 64, 64, 64)


@dataclass(frozen=True)
class CnnConfig:
    filters: int = 32
    repeats: tuple = (1, 1, 2, 2, 2, 2)
    head_widths: tuple = DEFAULT_WIDTHS
    slope: float = 0.1
    depth_max: float = 10.0
    bn_momentum: float = 0.1
    cell_position: bool = False  # learned per-cell bias added to every head output

    def __post_init__(self):
        object.__setattr__(self, "repeats", tuple(self.repeats))
        object.__setattr__(self, "head_widths", tuple(self.head_widths))

    @property
    def n_levels(self) -> int:
        return len(self.head_widths)


@dataclass
class CellEmbeddingSet:
    levels: list  # per level: Tensor (cells x width)

    def __getitem__(self, level: int) -> Tensor:
        return self.levels[level]

    def __len__(self) -> int:
        return len(self.levels)

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.levels]


def _conv_specs(cfg: CnnConfig):
    """(name, c_in, c_out, kernel, stride) for every ConvBN, in order."""
    specs = [("cnn.stem", 4, cfg.filters, 3, 1)]
    c = cfg.filters
    for s, n in enumerate(cfg.repeats):
        specs.append((f"cnn.set{s}.down", c, 2 * c, 3, 2))
        c *= 2
        for b in range(n):
            specs.append((f"cnn.set{s}.block{b}.a", c, c // 2, 1, 1))
            specs.append((f"cnn.set{s}.block{b}.b", c // 2, c, 3, 1))
    return specs


def map_channels(cfg: CnnConfig) -> list[int]:
    return [cfg.filters * 2 ** s for s in range(len(cfg.repeats) + 1)]


def head_source(cfg: CnnConfig, level: int) -> int:
    """Index of the feature map read by the head of ``level``."""
    n_maps = len(cfg.repeats) + 1
    return max(0, n_maps - 1 - level)


def init_cnn_params(cfg: CnnConfig, rng: np.random.Generator, dtype=np.float64):
    params: dict[str, Tensor] = {}
    buffers: dict[str, dict] = {}
    for name, cin, cout, k, _ in _conv_specs(cfg):
        std = np.sqrt(2.0 / (cin * k * k))
        params[f"{name}.w"] = parameter(rng.normal(0, std, (cout, cin, k, k)), dtype=dtype)
        params[f"{name}.gamma"] = parameter(np.ones(cout), dtype=dtype)
        params[f"{name}.beta"] = parameter(np.zeros(cout), dtype=dtype)
        buffers[name] = {"mean": np.zeros(cout), "var": np.ones(cout)}
    chans = map_channels(cfg)
    for lv, width in enumerate(cfg.head_widths):
        c = chans[head_source(cfg, lv)]
        params[f"cnn.head{lv}.hidden.W"] = parameter(rng.normal(0, np.sqrt(2.0 / c), (c, c)), dtype=dtype)
        params[f"cnn.head{lv}.hidden.b"] = parameter(np.zeros(c), dtype=dtype)
        params[f"cnn.head{lv}.out.W"] = parameter(rng.normal(0, np.sqrt(1.0 / c), (width, c)), dtype=dtype)
        params[f"cnn.head{lv}.out.b"] = parameter(np.zeros(width), dtype=dtype)
    return params, buffers


def init_position_params(cfg: CnnConfig, grid: GridHierarchy, dtype=np.float64) -> dict[str, Tensor]:
    """Zero-initialized per-cell tables, so enabling them leaves a fresh model's output unchanged."""
    if not cfg.cell_position:
        return {}
    return {f"cnn.head{lv}.pos": parameter(np.zeros((grid[lv].count, w)), dtype=dtype)
            for lv, w in enumerate(cfg.head_widths)}


def _conv_bn(x, params, buffers, name, stride, cfg, training):
    w = params[f"{name}.w"]
    y = conv2d(x, w, stride=stride, pad=w.shape[2] // 2)
    y = batch_norm2d(y, params[f"{name}.gamma"], params[f"{name}.beta"], buffers[name], training, cfg.bn_momentum)
    return leaky_relu(y, cfg.slope)


def prepare_rgbd(rgb: np.ndarray, depth: np.ndarray, depth_max: float, dtype=np.float64) -> np.ndarray:
    """Stack an H x W x 3 image in [0, 1] and an H x W depth map into 4 x H x W."""
    x = np.concatenate([np.transpose(rgb, (2, 0, 1)), (depth / depth_max)[None]], axis=0)
    return np.ascontiguousarray(x, dtype=dtype)


def feature_maps(x: Tensor, params, buffers, cfg: CnnConfig, training: bool) -> list[Tensor]:
    h = _conv_bn(x, params, buffers, "cnn.stem", 1, cfg, training)
    maps = [h]
    for s, n in enumerate(cfg.repeats):
        h = _conv_bn(h, params, buffers, f"cnn.set{s}.down", 2, cfg, training)
        for b in range(n):
            r = _conv_bn(h, params, buffers, f"cnn.set{s}.block{b}.a", 1, cfg, training)
            r = _conv_bn(r, params, buffers, f"cnn.set{s}.block{b}.b", 1, cfg, training)
            h = h + r
        maps.append(h)
    return maps


def embed_image(rgbd, grid: GridHierarchy, cfg: CnnConfig, params, buffers, training: bool = False) -> CellEmbeddingSet:
    """Cell embeddings for every level of ``grid`` from a 4 x H x W input."""
    x = rgbd if isinstance(rgbd, Tensor) else Tensor(rgbd)
    if x.ndim != 3 or x.shape[0] != 4 or x.shape[1:] != (grid.height, grid.width):
        raise ValueError(f"expected input of shape (4, {grid.height}, {grid.width}), got {x.shape}")
    if grid.n_levels != cfg.n_levels:
        raise ValueError(f"grid has {grid.n_levels} levels but the CNN has {cfg.n_levels} heads")
    maps = feature_maps(x, params, buffers, cfg, training)
    out = []
    for lv in range(cfg.n_levels):
        g = grid[lv]
        m = maps[head_source(cfg, lv)]
        pooled = adaptive_avg_pool2d(m, g.rows, g.cols)
        rows = transpose(reshape(pooled, (pooled.shape[0], g.count)))
        hid = leaky_relu(apply_linear(params[f"cnn.head{lv}.hidden.W"], params[f"cnn.head{lv}.hidden.b"], rows), cfg.slope)
        emb = apply_linear(params[f"cnn.head{lv}.out.W"], params[f"cnn.head{lv}.out.b"], hid)
        if cfg.cell_position:
            emb = emb + params[f"cnn.head{lv}.pos"]
        out.append(emb)
    return CellEmbeddingSet(out)
