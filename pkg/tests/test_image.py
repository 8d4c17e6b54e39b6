"""Hierarchical grid and the cell-embedding CNN."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshloc.image.cnn import (
    CnnConfig,
    embed_image,
    head_source,
    init_cnn_params,
    init_position_params,
    map_channels,
    prepare_rgbd,
)
from meshloc.image.grid import build_grid_hierarchy, locate_cell
from meshloc.numcore import Tensor, finite_difference_check, tsum

GRID = build_grid_hierarchy()


class TestGrid:
    def test_counts_and_final_cells(self):
        assert GRID.counts == [1, 2, 8, 32, 128, 512, 2048]
        g6 = GRID[6]
        assert (g6.cols, g6.rows, g6.cell_w, g6.cell_h) == (64, 32, 8, 9)
        assert (GRID[1].cols, GRID[1].rows) == (2, 1)

    def test_rejects_indivisible(self):
        with pytest.raises(ValueError):
            build_grid_hierarchy(500, 288)
        with pytest.raises(ValueError):
            build_grid_hierarchy(512, 280)

    def test_corners(self):
        for lv in range(7):
            assert locate_cell(GRID, lv, 0, 0) == 0
        assert locate_cell(GRID, 6, 511, 287) == 31 * 64 + 63
        assert locate_cell(GRID, 6, 511.999, 287.999) == 31 * 64 + 63

    def test_out_of_bounds(self):
        for u, v in [(-0.1, 0), (512, 0), (0, 288), (3, -1)]:
            with pytest.raises(ValueError):
                GRID.locate(3, u, v)

    @given(st.floats(0, 511.9999), st.floats(0, 287.9999))
    def test_parent_consistency(self, u, v):
        for lv in range(1, 7):
            assert GRID.parent(lv, GRID.locate(lv, u, v)) == GRID.locate(lv - 1, u, v)

    def test_children_tile_parent(self):
        for lv in range(6):
            kids = GRID.children(lv)
            assert kids.shape == (GRID[lv].count, GRID[lv + 1].count // GRID[lv].count)
            np.testing.assert_array_equal(np.sort(kids.ravel()), np.arange(GRID[lv + 1].count))
            coarse, fine = GRID.pixel_cells(lv), GRID.pixel_cells(lv + 1)
            for c in range(0, GRID[lv].count, max(1, GRID[lv].count // 16)):
                np.testing.assert_array_equal(np.isin(fine, kids[c]), coarse == c)
            np.testing.assert_array_equal(GRID.parent(lv + 1, kids), np.repeat(np.arange(GRID[lv].count)[:, None],
                                                                               kids.shape[1], 1))

    def test_cell_origin(self):
        np.testing.assert_array_equal(GRID.cell_origin(6, 65), [8.0, 9.0])


TINY_GRID = build_grid_hierarchy(64, 36, 4)
TINY = CnnConfig(filters=4, repeats=(1, 1, 1), head_widths=(6, 4, 4, 3))


class TestCnn:
    def test_head_sources(self):
        cfg = CnnConfig()
        assert [head_source(cfg, lv) for lv in range(7)] == [6, 5, 4, 3, 2, 1, 0]
        dn = CnnConfig(repeats=(1, 2, 8, 8, 4))
        assert [head_source(dn, lv) for lv in range(7)] == [5, 4, 3, 2, 1, 0, 0]
        assert map_channels(dn) == [32, 64, 128, 256, 512, 1024]

    def test_shapes_and_determinism(self, rng):
        params, buffers = init_cnn_params(TINY, rng)
        x = prepare_rgbd(rng.uniform(size=(36, 64, 3)), rng.uniform(0, 5, (36, 64)), 10.0)
        a = embed_image(x, TINY_GRID, TINY, params, buffers)
        b = embed_image(x, TINY_GRID, TINY, params, buffers)
        assert [t.shape for t in a.levels] == [(1, 6), (2, 4), (8, 4), (32, 3)]
        for s, t in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(s, t)

    def test_training_mode_updates_running_stats_only_then(self, rng):
        params, buffers = init_cnn_params(TINY, rng)
        x = prepare_rgbd(rng.uniform(size=(36, 64, 3)), rng.uniform(0, 5, (36, 64)), 10.0)
        before = buffers["cnn.stem"]["mean"].copy()
        embed_image(x, TINY_GRID, TINY, params, buffers, training=False)
        np.testing.assert_array_equal(buffers["cnn.stem"]["mean"], before)
        embed_image(x, TINY_GRID, TINY, params, buffers, training=True)
        assert not np.array_equal(buffers["cnn.stem"]["mean"], before)

    def test_cell_position_tables(self, rng):
        pos_cfg = CnnConfig(filters=4, repeats=(1, 1, 1), head_widths=(6, 4, 4, 3), cell_position=True)
        assert init_position_params(TINY, TINY_GRID) == {}
        tables = init_position_params(pos_cfg, TINY_GRID)
        assert [tables[f"cnn.head{lv}.pos"].shape for lv in range(4)] == [(1, 6), (2, 4), (8, 4), (32, 3)]
        params, buffers = init_cnn_params(TINY, rng)
        x = prepare_rgbd(rng.uniform(size=(36, 64, 3)), rng.uniform(0, 5, (36, 64)), 10.0)
        plain = embed_image(x, TINY_GRID, TINY, params, buffers).arrays()
        params.update(tables)
        for a, b in zip(plain, embed_image(x, TINY_GRID, pos_cfg, params, buffers).arrays()):
            np.testing.assert_array_equal(a, b)  # zero tables change nothing
        tables["cnn.head3.pos"].data[5] = 1.0
        shifted = embed_image(x, TINY_GRID, pos_cfg, params, buffers).arrays()[3]
        np.testing.assert_allclose(shifted - plain[3], np.eye(32)[5][:, None] * np.ones(3), atol=1e-12)

    def test_full_size_shapes(self, rng):
        cfg = CnnConfig(filters=4, repeats=(1,) * 6)
        params, buffers = init_cnn_params(cfg, rng)
        x = prepare_rgbd(rng.uniform(size=(288, 512, 3)), rng.uniform(0, 5, (288, 512)), 10.0)
        out = embed_image(x, GRID, cfg, params, buffers)
        assert [t.shape for t in out.levels] == [(1, 256), (2, 128), (8, 128), (32, 64), (128, 64), (512, 64),
                                                 (2048, 64)]

    def test_rejects_wrong_input(self, rng):
        params, buffers = init_cnn_params(TINY, rng)
        with pytest.raises(ValueError):
            embed_image(np.zeros((3, 36, 64)), TINY_GRID, TINY, params, buffers)
        with pytest.raises(ValueError):
            embed_image(np.zeros((4, 32, 64)), TINY_GRID, TINY, params, buffers)

    def test_gradient(self, rng):
        params, buffers = init_cnn_params(TINY, rng)
        for b in buffers.values():
            b["frozen"] = True
        x = Tensor(prepare_rgbd(rng.uniform(size=(36, 64, 3)), rng.uniform(0, 5, (36, 64)), 10.0))
        ws = [rng.normal(size=(n, w)) for n, w in zip(TINY_GRID.counts, TINY.head_widths)]

        def f():
            out = embed_image(x, TINY_GRID, TINY, params, buffers, training=True)
            return sum((tsum(t * w) for t, w in zip(out.levels, ws)), Tensor(0.0))

        assert finite_difference_check(f, params, n_coords=60, rng=rng, floor=1e-4) < 1e-4
