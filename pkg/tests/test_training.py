"""Ground truth, losses, augmentation and the epoch loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshloc.config import TrainSchedule, TrainStage
from meshloc.image.grid import build_grid_hierarchy
from meshloc.matcher import LevelCandidates, RouteState
from meshloc.model import init_model
from meshloc.numcore import Adam, backward, parameter
from meshloc.scene import PinholeCamera, RigidTransform, TriangleMesh
from meshloc.training import (
    AugmentConfig,
    GroundTruth,
    LossParts,
    LossWeights,
    TrainingError,
    augment_sample,
    bce,
    confidence_loss,
    generate_ground_truth,
    norm_loss,
    offset_loss,
    run_schedule,
    schedule_optimizer,
    similarity_loss,
    total_loss,
    train_epoch,
)

from .util import random_pose, sheet_dataset, teacher_routes, tiny_config, tiny_dataset

GRID = build_grid_hierarchy()
CAM = PinholeCamera(400.0, 400.0, 256.0, 144.0, 512, 288)
FROZEN = TrainStage(1, 1, 0.0, 0.0, 0.0)


def _depth_of(points_cam):
    """Depth map of a fronto-parallel plane at the depth of ``points_cam``."""
    return np.full((CAM.height, CAM.width), float(points_cam[0, 2]))


def _levels(*cands):
    """RouteState from (vertex, cell, confidence) triples per level; everything kept."""
    out = []
    for vertex, cell, conf in cands:
        vertex, cell = np.asarray(vertex, dtype=np.int64), np.asarray(cell, dtype=np.int64)
        out.append(LevelCandidates(vertex, cell, np.zeros(len(vertex)), np.asarray(conf, dtype=float),
                                   np.ones(len(vertex), dtype=bool)))
    return RouteState(out, ())


def _single_gt(cell_path, offset=(0.0, 0.0)):
    return GroundTruth(np.array([True]), np.array([cell_path]), np.array([offset], dtype=float),
                       np.array([[0.0, 0.0]]))


class TestGroundTruth:
    def test_cell_center_offset(self):
        u, v = 8 * 20 + 4.0, 9 * 10 + 4.5
        X = np.array([[(u - 256) / 400 * 2.0, (v - 144) / 400 * 2.0, 2.0]])
        gt = generate_ground_truth(X, RigidTransform.identity(), CAM, _depth_of(X), GRID)
        assert gt.visible[0]
        np.testing.assert_allclose(gt.offsets[0], [0.5, 0.5], atol=1e-12)
        assert gt.cells[0, 6] == 10 * 64 + 20

    def test_behind_camera(self):
        X = np.array([[0.0, 0.0, -1.0]])
        gt = generate_ground_truth(X, RigidTransform.identity(), CAM, np.full((288, 512), 1.0), GRID)
        assert not gt.visible[0]
        assert np.all(gt.cells[0] == -1)
        assert np.all(np.isnan(gt.offsets[0]))

    def test_occluded_by_near_plane(self):
        # near plane at z=1 covers the whole image; a far-plane vertex at z=3 is hidden
        X = np.array([[0.1, 0.05, 3.0], [0.2, -0.1, 1.0]])
        depth = np.full((288, 512), 1.0)
        gt = generate_ground_truth(X, RigidTransform.identity(), CAM, depth, GRID)
        assert list(gt.visible) == [False, True]
        # removing the near plane reveals it
        gt2 = generate_ground_truth(X[:1], RigidTransform.identity(), CAM, np.full((288, 512), 3.0), GRID)
        assert gt2.visible[0]

    def test_tolerance_bounds(self):
        X = np.array([[0.0, 0.0, 2.0]])
        for d, vis in ((2.039, True), (2.041, False)):  # tau = max(0.02 * 2, 0.01) = 0.04
            gt = generate_ground_truth(X, RigidTransform.identity(), CAM, np.full((288, 512), d), GRID)
            assert gt.visible[0] == vis

    def test_depth_shape_checked(self):
        with pytest.raises(ValueError, match="depth map"):
            generate_ground_truth(np.zeros((1, 3)), RigidTransform.identity(), CAM, np.ones((10, 10)), GRID)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_parent_consistent(self, seed):
        rng = np.random.default_rng(seed)
        T = random_pose(rng, 0.5)
        Xc = np.column_stack([rng.uniform(-2, 2, 200), rng.uniform(-1, 1, 200), rng.uniform(1, 4, 200)])
        X = T.inverse().apply(Xc)
        gt = generate_ground_truth(X, T, CAM, np.full((288, 512), 2.0), GRID, rel_tol=10.0)
        vis = gt.visible_ids()
        assert len(vis) > 0
        for lv in range(1, 7):
            np.testing.assert_array_equal(GRID.parent(lv, gt.cells[vis, lv]), gt.cells[vis, lv - 1])
        assert np.all(np.isfinite(gt.offsets[vis])) and np.all(np.isnan(gt.offsets[~gt.visible]))
        assert np.all((gt.offsets[vis] >= 0) & (gt.offsets[vis] < 1))


class TestSimilarity:
    GRID2 = build_grid_hierarchy(16, 9, 2)

    def _one_sibling(self, d_pos, d_neg, margin):
        e = [parameter(np.zeros((1, 2))), parameter([[0.0, 0.0]])]
        f = [parameter(np.zeros((1, 2))), parameter([[d_pos, 0.0], [0.0, d_neg]])]
        gt = _single_gt([0, 0])
        return similarity_loss(e, f, gt, self.GRID2, LossWeights(margins=(margin,))).item()

    def test_hand_example(self):
        np.testing.assert_allclose(self._one_sibling(0.1, 0.2, 0.35), 0.25, atol=1e-15)

    def test_satisfied_margin_is_zero(self):
        assert self._one_sibling(0.0, 0.5, 0.35) == 0.0

    def test_level_one_margin_default(self):
        assert LossWeights().margins[0] == 0.35
        # d_pos = d_neg, so the hinge equals the level-1 margin of the full grid
        e = [parameter(np.zeros((1, 2)))] + [parameter(np.zeros((1, 2))) for _ in range(6)]
        f = [parameter(np.zeros((GRID[lv].count, 2))) for lv in range(7)]
        for lv in range(2, 7):
            # deeper siblings far away: zero hinge there
            f[lv].data[:] = np.arange(GRID[lv].count)[:, None] * 10.0 + 10.0
        uv = np.array([[10.0, 10.0]])
        cells = [GRID.locate(lv, uv[:, 0], uv[:, 1])[0] for lv in range(7)]
        for lv in range(2, 7):
            f[lv].data[cells[lv]] = 0.0
        gt = _single_gt(cells)
        np.testing.assert_allclose(similarity_loss(e, f, gt, GRID, LossWeights()).item(), 0.35, atol=1e-12)

    def test_oracle_and_nonnegative(self, rng):
        g = build_grid_hierarchy(32, 18, 3)
        V, w = 6, 4
        e = [parameter(rng.normal(size=(V, w))) for _ in range(3)]
        f = [parameter(rng.normal(size=(g[lv].count, w))) for lv in range(3)]
        uv = np.column_stack([rng.uniform(0, 32, V), rng.uniform(0, 18, V)])
        cells = np.column_stack([g.locate(lv, uv[:, 0], uv[:, 1]) for lv in range(3)])
        gt = GroundTruth(np.ones(V, bool), cells, np.zeros((V, 2)), uv)
        weights = LossWeights(margins=(0.3, 0.2))
        ref = 0.0
        for lv in (1, 2):
            per = 0.0
            for v in range(V):
                kids = g.children(lv - 1)[cells[v, lv - 1]]
                dp = np.linalg.norm(e[lv].data[v] - f[lv].data[cells[v, lv]])
                for r in kids:
                    if r != cells[v, lv]:
                        per += max(0.0, dp - np.linalg.norm(e[lv].data[v] - f[lv].data[r]) + weights.margins[lv - 1])
            ref += per / V
        got = similarity_loss(e, f, gt, g, weights).item()
        np.testing.assert_allclose(got, ref, rtol=1e-12)
        assert got >= 0

    def test_no_visible_vertices(self):
        e = [parameter(np.ones((2, 3))) for _ in range(7)]
        f = [parameter(np.ones((GRID[lv].count, 3))) for lv in range(7)]
        gt = GroundTruth(np.zeros(2, bool), np.full((2, 7), -1), np.full((2, 2), np.nan), np.full((2, 2), np.nan))
        assert similarity_loss(e, f, gt, GRID, LossWeights()).item() == 0.0


class TestOffset:
    def _routes(self, cells, vertices):
        return _levels((vertices, cells, np.ones(len(vertices))))

    def test_perfect_is_zero(self):
        gt = _single_gt([5], (0.25, 0.75))
        loss, empty = offset_loss(np.array([[0.25, 0.75]]), gt, self._routes([5], [0]))
        assert loss.item() == 0.0 and not empty

    def test_single_vertex(self):
        gt = _single_gt([5], (0.0, 0.0))
        loss, _ = offset_loss(np.array([[0.5, 0.5]]), gt, self._routes([5], [0]))
        np.testing.assert_allclose(loss.item(), 0.5, atol=1e-15)

    def test_misrouted_excluded(self):
        # vertex 0 routed correctly, vertex 1 to a wrong cell: only vertex 0 contributes, mean over both
        gt = GroundTruth(np.array([True, True]), np.array([[5], [7]]), np.array([[0.0, 0.0], [0.0, 0.0]]),
                         np.zeros((2, 2)))
        loss, _ = offset_loss(np.array([[0.5, 0.5], [0.9, 0.9]]), gt, self._routes([5, 8], [0, 1]))
        np.testing.assert_allclose(loss.item(), 0.25, atol=1e-15)

    def test_empty_flag(self):
        gt = _single_gt([5])
        loss, empty = offset_loss(np.zeros((0, 2)), gt, self._routes([], []))
        assert empty and loss.item() == 0.0

    def test_shape_checked(self):
        with pytest.raises(ValueError, match="offset rows"):
            offset_loss(np.zeros((3, 2)), _single_gt([5]), self._routes([5], [0]))


class TestConfidence:
    def test_perfect_prediction(self):
        gt = GroundTruth(np.array([True, False]), np.array([[0], [-1]]), np.zeros((2, 2)), np.zeros((2, 2)))
        routes = _levels(([0, 1], [0, 0], [1.0, 0.0]))
        loss = confidence_loss([parameter([1.0, 0.0])], gt, routes).item()
        assert 0 <= loss < 1e-6

    def test_half_is_ln2(self):
        assert abs(bce(parameter([0.5]), [1.0]).item() - np.log(2)) < 1e-15
        assert abs(bce(parameter([0.5]), [0.0]).item() - np.log(2)) < 1e-15

    def test_bce_oracle(self, rng):
        p, y = rng.uniform(0.01, 0.99, 50), rng.integers(0, 2, 50).astype(float)
        ref = np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p)))
        np.testing.assert_allclose(bce(parameter(p), y).item(), ref, rtol=1e-12)

    def test_clamp_keeps_finite(self):
        assert np.isfinite(bce(parameter([0.0, 1.0]), [1.0, 0.0]).item())

    def test_level_sum_and_targets(self):
        # level 0: vertex visible; level 1: candidates (cell 0 correct, cell 1 wrong)
        gt = GroundTruth(np.array([True]), np.array([[0, 0]]), np.zeros((1, 2)), np.zeros((1, 2)))
        routes = _levels(([0], [0], [0.5]), ([0, 0], [0, 1], [0.8, 0.3]))
        got = confidence_loss([parameter([0.5]), parameter([0.8, 0.3])], gt, routes).item()
        ref = np.log(2) + np.mean([-np.log(0.8), -np.log(0.7)])
        np.testing.assert_allclose(got, ref, rtol=1e-12)

    def test_monotone_in_correct_probability(self, rng):
        gt = GroundTruth(np.array([True]), np.array([[0, 0]]), np.zeros((1, 2)), np.zeros((1, 2)))
        routes = _levels(([0], [0], [0.5]), ([0, 0], [0, 1], [0.5, 0.5]))
        prev = np.inf
        for p in np.linspace(0.05, 0.95, 10):
            val = confidence_loss([parameter([0.7]), parameter([p, 0.4])], gt, routes).item()
            assert val < prev
            prev = val


class TestNormAndTotal:
    def test_zero_embeddings(self):
        assert norm_loss([np.zeros((3, 4))], [np.zeros((2, 4))]).item() == 0.0

    def test_unit_vertex(self):
        assert norm_loss([np.array([[0.6, 0.8]])], [np.zeros((2, 2))]).item() == 1.0

    def test_oracle(self, rng):
        e = [rng.normal(size=(5, 3)), rng.normal(size=(5, 2))]
        f = [rng.normal(size=(1, 3)), rng.normal(size=(2, 2))]
        ref = sum(np.linalg.norm(a, axis=1).mean() + np.linalg.norm(b, axis=1).mean() for a, b in zip(e, f))
        np.testing.assert_allclose(norm_loss(e, f).item(), ref, rtol=1e-12)

    def test_total_weights(self):
        one = parameter(1.0)
        zero = parameter(0.0)
        assert total_loss(LossParts(zero, zero, zero, zero)).item() == 0.0
        np.testing.assert_allclose(total_loss(LossParts(one, one, one, one)).item(), 18.2, rtol=1e-15)

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_s=0.0)
        with pytest.raises(ValueError, match="decreasing"):
            LossWeights(margins=(0.2, 0.3))
        with pytest.raises(ValueError, match="decreasing"):
            LossWeights(margins=(0.2, 0.2))


class TestAugment:
    def _inputs(self, rng):
        from meshloc.scene import FrameRecord

        mesh = TriangleMesh(rng.normal(size=(20, 3)), np.tile([0.0, 0.0, 1.0], (20, 1)), rng.uniform(size=(20, 3)),
                            np.zeros((20, 3)), rng.integers(0, 20, (10, 3)))
        frame = FrameRecord(rng.uniform(size=(18, 32, 3)), rng.uniform(1, 2, (18, 32)), RigidTransform.identity())
        return frame, mesh

    def test_zero_strength_identity(self, rng):
        frame, mesh = self._inputs(rng)
        for stage in (1, 2, 3):
            f2, m2 = augment_sample(frame, mesh, stage, 7, AugmentConfig(strength=0.0))
            np.testing.assert_array_equal(f2.rgb, frame.rgb)
            np.testing.assert_array_equal(f2.depth, frame.depth)
            np.testing.assert_array_equal(m2.positions, mesh.positions)
            np.testing.assert_array_equal(m2.normals, mesh.normals)

    def test_rotation_is_rigid(self, rng):
        frame, mesh = self._inputs(rng)
        _, m2 = augment_sample(frame, mesh, 1, 3)
        d0 = np.linalg.norm(mesh.positions[:, None] - mesh.positions[None], axis=-1)
        d1 = np.linalg.norm(m2.positions[:, None] - m2.positions[None], axis=-1)
        np.testing.assert_allclose(d1, d0, atol=1e-9)
        assert not np.allclose(m2.positions, mesh.positions)

    def test_mesh_rotated_in_stage_one_only(self, rng):
        frame, mesh = self._inputs(rng)
        for stage in (2, 3):
            f2, m2 = augment_sample(frame, mesh, stage, 3)
            assert m2 is mesh
            assert not np.array_equal(f2.rgb, frame.rgb)
            np.testing.assert_array_equal(f2.depth, frame.depth)
            assert f2.pose is frame.pose

    def test_deterministic(self, rng):
        frame, mesh = self._inputs(rng)
        a = augment_sample(frame, mesh, 1, 11)
        b = augment_sample(frame, mesh, 1, 11)
        np.testing.assert_array_equal(a[0].rgb, b[0].rgb)
        np.testing.assert_array_equal(a[1].positions, b[1].positions)
        c = augment_sample(frame, mesh, 1, 12)
        assert not np.array_equal(a[0].rgb, c[0].rgb)

    def test_bad_inputs(self, rng):
        frame, mesh = self._inputs(rng)
        with pytest.raises(ValueError, match="stage"):
            augment_sample(frame, mesh, 4, 0)
        with pytest.raises(ValueError, match="strength"):
            AugmentConfig(strength=-1.0)


@pytest.fixture(scope="module")
def tiny():
    cfg = tiny_config()
    data, _ = tiny_dataset(cfg)
    return cfg, data


def _snapshot(model):
    return {k: v.data.copy() for k, v in model.params.items()}


class TestTrainEpoch:
    def test_zero_lr_fixed_point(self, tiny):
        cfg, data = tiny
        model = init_model(cfg)
        before = _snapshot(model)
        a = train_epoch(data, model, Adam(), FROZEN, 0)
        b = train_epoch(data, model, Adam(), FROZEN, 0)
        for k, v in model.params.items():
            np.testing.assert_array_equal(v.data, before[k])
        assert a.total == b.total

    def test_seed_determinism(self, tiny):
        cfg, data = tiny
        st1 = TrainStage(1, 1, 3e-3)
        runs = []
        for _ in range(2):
            model, opt = init_model(cfg), Adam()
            runs.append([train_epoch(data, model, opt, st1, 5, epoch=e).total for e in range(3)])
        assert runs[0] == runs[1]

    def test_overfit_halves_loss(self, tiny):
        cfg, data = tiny
        model, opt = init_model(cfg), Adam()
        stage = TrainStage(1, 1, 3e-3, 0.0, 0.0)
        hist = [train_epoch(data, model, opt, stage, 0, epoch=e).total for e in range(30)]
        assert hist[-1] <= 0.5 * hist[0], hist

    def test_non_finite_names_frame(self, tiny):
        cfg, data = tiny
        model = init_model(cfg)
        model.params["match.conf0.b"].data[:] = np.nan
        with pytest.raises(TrainingError) as err:
            train_epoch(data, model, Adam(), FROZEN, 0)
        assert err.value.frame_id in {f.frame_id for f in data.frames}
        assert err.value.frame_id in str(err.value)

    def test_schedule_log_and_stage3(self, tiny, tmp_path):
        cfg, data = tiny
        model = init_model(cfg)
        sched = TrainSchedule(stages=(TrainStage(1, 1, 1e-3), TrainStage(3, 1, 1e-4)))
        hist = run_schedule([data], model, sched, cfg.loss, cfg.augment, 0, tmp_path / "log.tsv")
        rows = (tmp_path / "log.tsv").read_text().splitlines()
        assert rows[0].split("\t")[:3] == ["stage", "epoch", "total"]
        assert [h.stage for h in hist] == [1, 3] and len(rows) == 3
        with pytest.raises(TrainingError, match="one scene"):
            run_schedule([data, data], model, sched, cfg.loss, cfg.augment, 0)
        with pytest.raises(ValueError, match="order"):
            TrainSchedule(stages=(TrainStage(2, 1, 1e-3), TrainStage(1, 1, 1e-3)))

    def test_schedule_optimizer(self):
        assert schedule_optimizer(TrainSchedule()).lr_scale == {}
        opt = schedule_optimizer(TrainSchedule(head_lr_scale=4.0))
        opt.lr = 1e-3
        assert opt.rate("match.offset.W") == pytest.approx(4e-3) and opt.rate("cnn.stem.w") == 1e-3

    def test_gradient_matches_finite_differences(self, rng):
        from meshloc.numcore import finite_difference_check
        from meshloc.training import frame_loss

        cfg = tiny_config()
        data = sheet_dataset(cfg, rng)
        model = init_model(cfg, seed=3)
        routes = teacher_routes(data.truths[0], data.grid)
        names = ["gnn.input.W", "gnn.block0.W", "gnn.block0.att_dst", "cnn.set1.block0.a.w", "cnn.head3.out.W",
                 "match.conf1.W", "match.offset.W"]
        params = {k: model.params[k] for k in names}

        def f():
            return frame_loss(model, data, 0, cfg.loss, training=False, routes=routes).total

        out = frame_loss(model, data, 0, cfg.loss, training=False, routes=routes)
        assert out.parts.offset.item() > 0
        assert finite_difference_check(f, params, n_coords=40, rng=rng, floor=1e-4) < 1e-4
