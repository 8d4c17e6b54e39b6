"""Graph-attention vertex embedder."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshloc.gnn import (
    DEFAULT_SPLIT,
    GatLayerParams,
    GnnConfig,
    attention_weights,
    embed_features,
    embed_vertices,
    gat_layer_forward,
    init_gnn_params,
    masked_features,
)
from meshloc.numcore import Tensor, finite_difference_check, reshape, tsum, matmul
from meshloc.scene import MeshGraph, TriangleMesh, vertex_normals

from .util import gat_oracle, leaky, random_graph, random_graph_mesh

TINY = GnnConfig(blocks=2, widths=(8, 8), heads=(2, 2), split=(4, 2, 2, 2, 2, 2, 2))


def _layer(rng, d_in, width, heads):
    dh = width // heads
    return GatLayerParams(Tensor(rng.normal(size=(d_in, width))), Tensor(rng.normal(size=(heads, dh))),
                          Tensor(rng.normal(size=(heads, dh))), heads)


class TestGatLayer:
    def test_isolated_vertex(self, rng):
        p = _layer(rng, 3, 4, 1)
        H = rng.normal(size=(1, 3))
        g = MeshGraph.from_adjacency([np.zeros(0, np.int64)])
        out = gat_layer_forward(Tensor(H), g, p).data
        np.testing.assert_allclose(out, leaky(H @ p.W.data, 0.2), atol=1e-14)

    def test_identical_pair_splits_evenly(self, rng):
        p = _layer(rng, 3, 4, 2)
        H = np.tile(rng.normal(size=3), (2, 1))
        g = MeshGraph.from_adjacency([np.array([1]), np.array([0])])
        z = reshape(matmul(Tensor(H), p.W), (2, 2, 2))
        alpha = attention_weights(z, g, p).data
        np.testing.assert_allclose(alpha, 0.5, atol=1e-15)

    def test_matches_oracle(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 13))
            adj = random_graph(rng, n)
            p = _layer(rng, 5, 6, 3)
            H = rng.normal(size=(n, 5))
            out = gat_layer_forward(Tensor(H), MeshGraph.from_adjacency(adj), p).data
            ref, _ = gat_oracle(H, adj, p.W.data, p.att_src.data, p.att_dst.data, 3)
            assert np.max(np.abs(out - ref)) < 1e-10

    def test_gcn_mode_is_uniform(self, rng):
        adj = random_graph(rng, 8)
        g = MeshGraph.from_adjacency(adj)
        p = _layer(rng, 4, 4, 2)
        z = reshape(matmul(Tensor(rng.normal(size=(8, 4))), p.W), (8, 2, 2))
        alpha = attention_weights(z, g, p, mode="gcn").data
        np.testing.assert_allclose(alpha[:, 0], 1.0 / g.degree[g.targets])

    def test_width_mismatch(self, rng):
        g = MeshGraph.from_adjacency([np.zeros(0, np.int64)] * 2)
        with pytest.raises(ValueError):
            gat_layer_forward(Tensor(rng.normal(size=(2, 4))), g, _layer(rng, 3, 4, 2))

    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1))
    def test_attention_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 15))
        g = MeshGraph.from_adjacency(random_graph(rng, n))
        p = _layer(rng, 3, 6, 3)
        z = reshape(matmul(Tensor(rng.normal(0, 3, size=(n, 3))), p.W), (n, 3, 2))
        alpha = attention_weights(z, g, p).data
        sums = np.zeros((n, 3))
        np.add.at(sums, g.targets, alpha)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)


class TestEmbedder:
    def test_default_split(self):
        cfg = GnnConfig()
        assert cfg.output_width == 768
        assert cfg.split == DEFAULT_SPLIT == (256, 128, 128, 64, 64, 64, 64)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GnnConfig(attention="mlp")
        with pytest.raises(ValueError):
            GnnConfig(blocks=1, widths=(10,), heads=(4,))
        with pytest.raises(ValueError):
            GnnConfig(feature_mask=("texture",))

    def test_views(self, rng):
        m = random_graph_mesh(rng)
        d = embed_vertices(m, TINY, init_gnn_params(TINY, rng))
        assert [v.shape[1] for v in d.levels()] == list(TINY.split)
        np.testing.assert_array_equal(np.concatenate(d.arrays(), axis=1), d.descriptors.data)

    def test_permutation_equivariance(self, rng):
        m = random_graph_mesh(rng, n=12, n_faces=10)
        params = init_gnn_params(TINY, rng)
        perm = rng.permutation(m.n_vertices)
        inv = np.argsort(perm)
        pm = TriangleMesh(m.positions[perm], m.normals[perm], m.colors[perm], m.semantics[perm], inv[m.faces])
        a = embed_vertices(m, TINY, params).descriptors.data
        b = embed_vertices(pm, TINY, params).descriptors.data
        np.testing.assert_allclose(b, a[perm], atol=1e-12)

    def test_identical_components(self, rng):
        m = random_graph_mesh(rng, n=6, n_faces=4)
        n = m.n_vertices
        two = TriangleMesh(np.concatenate([m.positions] * 2), np.concatenate([m.normals] * 2),
                           np.concatenate([m.colors] * 2), np.concatenate([m.semantics] * 2),
                           np.concatenate([m.faces, m.faces + n]))
        d = embed_vertices(two, TINY, init_gnn_params(TINY, rng)).descriptors.data
        np.testing.assert_array_equal(d[:n], d[n:])

    def test_receptive_field_on_path(self, rng):
        n = 10
        adj = [np.array([j for j in (i - 1, i + 1) if 0 <= j < n]) for i in range(n)]
        g = MeshGraph.from_adjacency(adj)
        params = init_gnn_params(TINY, rng)
        x = rng.normal(size=(n, 12))
        base = embed_features(x, g, TINY, params).descriptors.data
        x2 = x.copy()
        x2[9] += 5.0
        moved = embed_features(x2, g, TINY, params).descriptors.data
        # two blocks: vertices more than two hops from vertex 9 are untouched
        np.testing.assert_array_equal(moved[:7], base[:7])
        assert not np.allclose(moved[7:], base[7:])

    def test_feature_mask_zeroes_slots(self, rng):
        m = random_graph_mesh(rng)
        x = masked_features(m, ("color", "semantic"))
        assert np.all(x[:, 6:12] == 0)
        np.testing.assert_array_equal(x[:, :6], m.features()[:, :6])

    def test_non_finite_names_block(self, rng):
        m = random_graph_mesh(rng)
        params = init_gnn_params(TINY, rng)
        params["gnn.block1.W"].data[:] = np.inf
        with pytest.raises(FloatingPointError, match="block 1"):
            embed_vertices(m, TINY, params)

    def test_gradient(self, rng):
        m = random_graph_mesh(rng, n=10, n_faces=8)
        params = init_gnn_params(TINY, rng)
        w = rng.normal(size=(10, 16))
        g = MeshGraph.from_mesh(m)
        f = lambda: tsum(embed_vertices(m, TINY, params, g).descriptors * w)  # noqa: E731
        assert finite_difference_check(f, params, n_coords=80, rng=rng, floor=1e-4) < 1e-4
