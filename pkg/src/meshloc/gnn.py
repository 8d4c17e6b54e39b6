"""Graph-attention embedder for mesh vertices.

Pipeline: masked 12-d vertex features -> linear 12->16 -> ``blocks`` GATNorm
blocks (per-vertex standardization with learnable scale/shift, then a
multi-head graph attention layer) -> linear to the descriptor width, which
is split into one subvector per grid level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import (
    Tensor,
    apply_linear,
    getitem,
    leaky_relu,
    matmul,
    mul,
    parameter,
    reshape,
    segment_sum,
    segmented_softmax,
    standardize_rows,
    tsum,
)
from .scene.mesh import FEATURE_SLOTS, MeshGraph, TriangleMesh

DEFAULT_SPLIT = (256, 128, 128, 64, 64, 64, 64)


@dataclass(frozen=True)
class GnnConfig:
    blocks: int = 7
    widths: tuple = (32, 32, 64, 64, 128, 128, 256)
    heads: tuple = (4, 4, 4, 4, 4, 4, 4)
    input_width: int = 16
    split: tuple = DEFAULT_SPLIT
    attention: str = "gat"
    feature_mask: tuple = ()
    slope: float = 0.2

    def __post_init__(self):
        for name in ("widths", "heads", "split", "feature_mask"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.attention not in ("gat", "gcn"):
            raise ValueError(f"attention must be 'gat' or 'gcn', got {self.attention!r}")
        if len(self.widths) < self.blocks or len(self.heads) < self.blocks:
            raise ValueError("need a width and head count for every block")
        for w, k in zip(self.widths[:self.blocks], self.heads[:self.blocks]):
            if w % k:
                raise ValueError(f"block width {w} is not divisible by {k} heads")
        unknown = set(self.feature_mask) - set(FEATURE_SLOTS)
        if unknown:
            raise ValueError(f"unknown feature slots {sorted(unknown)}")

    @property
    def output_width(self) -> int:
        return sum(self.split)


@dataclass
class GatLayerParams:
    W: Tensor  # d_in x (heads * d_head)
    att_src: Tensor  # heads x d_head, weights z_i (the receiving vertex)
    att_dst: Tensor  # heads x d_head, weights z_j (the neighbor)
    heads: int

    @property
    def head_width(self) -> int:
        return self.W.shape[1] // self.heads


@dataclass
class VertexDescriptorSet:
    descriptors: Tensor
    split: tuple

    def level(self, lv: int) -> Tensor:
        lo = sum(self.split[:lv])
        return getitem(self.descriptors, (slice(None), slice(lo, lo + self.split[lv])))

    def levels(self) -> list[Tensor]:
        return [self.level(lv) for lv in range(len(self.split))]

    def arrays(self) -> list[np.ndarray]:
        bounds = np.cumsum((0,) + tuple(self.split))
        return [self.descriptors.data[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def init_gnn_params(cfg: GnnConfig, rng: np.random.Generator, dtype=np.float64) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    p["gnn.input.W"] = parameter(rng.normal(0, np.sqrt(1.0 / 12), (cfg.input_width, 12)), dtype=dtype)
    p["gnn.input.b"] = parameter(np.zeros(cfg.input_width), dtype=dtype)
    d_in = cfg.input_width
    for b in range(cfg.blocks):
        w, k = cfg.widths[b], cfg.heads[b]
        p[f"gnn.block{b}.gamma"] = parameter(np.ones(d_in), dtype=dtype)
        p[f"gnn.block{b}.beta"] = parameter(np.zeros(d_in), dtype=dtype)
        p[f"gnn.block{b}.W"] = parameter(rng.normal(0, np.sqrt(2.0 / d_in), (d_in, w)), dtype=dtype)
        p[f"gnn.block{b}.att_src"] = parameter(rng.normal(0, np.sqrt(1.0 / (w // k)), (k, w // k)), dtype=dtype)
        p[f"gnn.block{b}.att_dst"] = parameter(rng.normal(0, np.sqrt(1.0 / (w // k)), (k, w // k)), dtype=dtype)
        d_in = w
    p["gnn.output.W"] = parameter(rng.normal(0, np.sqrt(1.0 / d_in), (cfg.output_width, d_in)), dtype=dtype)
    p["gnn.output.b"] = parameter(np.zeros(cfg.output_width), dtype=dtype)
    return p


def block_params(params, cfg: GnnConfig, b: int) -> GatLayerParams:
    return GatLayerParams(params[f"gnn.block{b}.W"], params[f"gnn.block{b}.att_src"],
                          params[f"gnn.block{b}.att_dst"], cfg.heads[b])


def attention_weights(z: Tensor, graph: MeshGraph, params: GatLayerParams, mode: str = "gat",
                      slope: float = 0.2) -> Tensor:
    """E x K attention coefficients over the edges of ``graph`` (self loops included)."""
    if mode == "gcn":
        alpha = 1.0 / graph.degree[graph.targets].astype(z.data.dtype)
        return Tensor(np.repeat(alpha[:, None], params.heads, axis=1).astype(z.data.dtype))
    s_src = tsum(mul(z, params.att_src), axis=2)  # V x K
    s_dst = tsum(mul(z, params.att_dst), axis=2)
    scores = leaky_relu(getitem(s_src, graph.targets) + getitem(s_dst, graph.sources), slope)
    return segmented_softmax(scores, graph.targets, graph.n)


def gat_layer_forward(H: Tensor, graph: MeshGraph, params: GatLayerParams, mode: str = "gat",
                      slope: float = 0.2) -> Tensor:
    """One multi-head attention layer; heads are concatenated."""
    if H.shape[1] != params.W.shape[0]:
        raise ValueError(f"layer expects {params.W.shape[0]} input features, got {H.shape[1]}")
    if H.shape[0] != graph.n:
        raise ValueError(f"graph has {graph.n} vertices but features have {H.shape[0]} rows")
    K, dh = params.heads, params.head_width
    z = reshape(matmul(H, params.W), (graph.n, K, dh))
    alpha = attention_weights(z, graph, params, mode, slope)
    msg = mul(reshape(alpha, (-1, K, 1)), getitem(z, graph.sources))
    h = segment_sum(msg, graph.targets, graph.n)
    return reshape(leaky_relu(h, slope), (graph.n, K * dh))


def masked_features(mesh: TriangleMesh, mask=()) -> np.ndarray:
    x = mesh.features().copy()
    for slot in mask:
        x[:, FEATURE_SLOTS[slot]] = 0.0
    return x


def embed_features(x: np.ndarray, graph: MeshGraph, cfg: GnnConfig, params) -> VertexDescriptorSet:
    dtype = params["gnn.input.W"].data.dtype
    h = apply_linear(params["gnn.input.W"], params["gnn.input.b"], Tensor(np.asarray(x, dtype=dtype)))
    for b in range(cfg.blocks):
        h = standardize_rows(h) * params[f"gnn.block{b}.gamma"] + params[f"gnn.block{b}.beta"]
        h = gat_layer_forward(h, graph, block_params(params, cfg, b), cfg.attention, cfg.slope)
        if not np.all(np.isfinite(h.data)):
            raise FloatingPointError(f"non-finite activation in GATNorm block {b}")
    out = apply_linear(params["gnn.output.W"], params["gnn.output.b"], h)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite activation in the output layer")
    return VertexDescriptorSet(out, cfg.split)


def embed_vertices(mesh: TriangleMesh, cfg: GnnConfig, params, graph: MeshGraph | None = None) -> VertexDescriptorSet:
    """Descriptors for a normalized mesh."""
    graph = graph or MeshGraph.from_mesh(mesh)
    return embed_features(masked_features(mesh, cfg.feature_mask), graph, cfg, params)
