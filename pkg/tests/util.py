"""Shared builders for tests."""

import numpy as np
from scipy.spatial.transform import Rotation

from meshloc.scene import RigidTransform, TriangleMesh, vertex_normals


def random_rotation(rng, max_deg=None) -> np.ndarray:
    if max_deg is None:
        return Rotation.random(random_state=rng).as_matrix()
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * np.deg2rad(rng.uniform(0, max_deg))).as_matrix()


def random_pose(rng, scale=1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.normal(0, scale, 3))


def grid_mesh(rng, nu=5, nv=4, jitter=0.05) -> TriangleMesh:
    """Wavy height-field sheet with random colors; a valid closed-form mesh."""
    a, b = np.meshgrid(np.arange(nu + 1), np.arange(nv + 1), indexing="ij")
    P = np.stack([a.ravel(), b.ravel(), np.zeros(a.size)], 1).astype(float)
    P[:, 2] = rng.normal(0, jitter, len(P))
    idx = np.arange(len(P)).reshape(nu + 1, nv + 1)
    q00, q10, q01, q11 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    F = np.concatenate([np.stack([q00, q10, q11], 1), np.stack([q00, q11, q01], 1)])
    n = len(P)
    return TriangleMesh(P, vertex_normals(P, F), rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, (n, 3)), F)


def random_graph_mesh(rng, n=10, n_faces=8) -> TriangleMesh:
    P = rng.normal(size=(n, 3))
    F = np.array([rng.choice(n, 3, replace=False) for _ in range(n_faces)])
    return TriangleMesh(P, vertex_normals(P, F), rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, (n, 3)), F)


def leaky(x, s):
    return np.where(x > 0, x, s * x)


def gat_oracle(H, adjacency, W, att_src, att_dst, heads, slope=0.2):
    """Per-pair loop over every vertex, neighbour and head (literal attention formulas).

    Returns (output, alpha) where alpha[i][k] maps neighbour j -> weight.
    """
    n = len(H)
    dh = W.shape[1] // heads
    out = np.zeros((n, heads * dh))
    alpha = []
    for i in range(n):
        nbrs = [i] + [int(j) for j in adjacency[i]]
        rows = []
        for k in range(heads):
            Wk = W[:, k * dh:(k + 1) * dh]
            zi = H[i] @ Wk
            scores = []
            for j in nbrs:
                zj = H[j] @ Wk
                scores.append(leaky(float(att_src[k] @ zi + att_dst[k] @ zj), slope))
            m = max(scores)
            ex = [np.exp(s - m) for s in scores]
            tot = sum(ex)
            a = {j: e / tot for j, e in zip(nbrs, ex)}
            acc = np.zeros(dh)
            for j in nbrs:
                acc += a[j] * (H[j] @ Wk)
            out[i, k * dh:(k + 1) * dh] = leaky(acc, slope)
            rows.append(a)
        alpha.append(rows)
    return out, alpha


def random_graph(rng, n):
    """Random undirected adjacency lists without self loops."""
    adj = [set() for _ in range(n)]
    for _ in range(int(rng.integers(0, 2 * n + 1))):
        i, j = rng.choice(n, 2, replace=False) if n > 1 else (0, 0)
        if i != j:
            adj[i].add(int(j))
            adj[j].add(int(i))
    return [np.array(sorted(a), dtype=np.int64) for a in adj]


def tiny_config(levels=5, width=128, height=72, **gnn_kw):
    """A small model over a ``levels``-level grid of ``width`` x ``height`` frames."""
    from meshloc.config import GridConfig, RunConfig
    from meshloc.gnn import GnnConfig
    from meshloc.image.cnn import CnnConfig
    from meshloc.matcher import MatchConfig
    from meshloc.training import LossWeights

    split = (16,) * levels
    gnn = GnnConfig(**{**dict(blocks=1, widths=(32,), heads=(4,), split=split), **gnn_kw})
    return RunConfig(grid=GridConfig(width, height, levels), gnn=gnn,
                     cnn=CnnConfig(filters=8, repeats=(1,) * (levels - 1), head_widths=split),
                     match=MatchConfig(beams=(1, 3, 3, 3, 4, 4)[:levels - 1]),
                     loss=LossWeights(margins=(0.35, 0.30, 0.25, 0.20, 0.15, 0.10)[:levels - 1]))


def tiny_dataset(cfg, n_frames=5, seed=0, arc=0.05):
    """Synthetic room frames rendered at the grid size of ``cfg``."""
    from meshloc.image.grid import build_grid_hierarchy
    from meshloc.scene import PinholeCamera
    from meshloc.synth.render import render_rgbd
    from meshloc.synth.scenes import SceneParams, generate_scene
    from meshloc.training import SceneDataset

    w, h = cfg.grid.width, cfg.grid.height
    cam = PinholeCamera(400.0 * w / 512, 400.0 * w / 512, w / 2, h / 2, w, h)
    sc = generate_scene(seed, SceneParams(n_frames=n_frames, arc=arc, n_configurations=1), cam)
    frames = [render_rgbd(sc, 0, sc.trajectory[k], frame_id=f"{k:06d}") for k in range(n_frames)]
    return SceneDataset.build(sc.mesh, frames, cam, build_grid_hierarchy(w, h, cfg.grid.levels)), sc


def sheet_dataset(cfg, rng, nu=8, nv=5):
    """One frame of a small colored sheet filling the view of a ``cfg``-sized camera."""
    from meshloc.image.grid import build_grid_hierarchy
    from meshloc.scene import FrameRecord, PinholeCamera
    from meshloc.synth.render import rasterize
    from meshloc.training import SceneDataset

    w, h = cfg.grid.width, cfg.grid.height
    cam = PinholeCamera(100.0 * w / 128, 100.0 * w / 128, w / 2, h / 2, w, h)
    m = grid_mesh(rng, nu, nv, jitter=0.05)
    P = (m.positions - [nu / 2, nv / 2, 0.0]) * [2.6 / nu, 1.6 / nv, 1.0] + [0.0, 0.0, 2.0]
    mesh = m.with_positions(P, vertex_normals(P, m.faces))
    rgb, depth = rasterize(P, mesh.faces, mesh.colors, cam)
    frame = FrameRecord(rgb, depth, RigidTransform.identity(), 0, "sheet")
    return SceneDataset.build(mesh, [frame], cam, build_grid_hierarchy(w, h, cfg.grid.levels))


def teacher_routes(gt, grid):
    """Every vertex at level 0, then all children of each visible vertex's true parent, all kept."""
    from meshloc.matcher import LevelCandidates, RouteState

    def level(v, c):
        n = len(v)
        return LevelCandidates(v, c, np.zeros(n), np.ones(n), np.ones(n, dtype=bool))

    V = gt.n_vertices
    levels = [level(np.arange(V), np.zeros(V, dtype=np.int64))]
    vis = gt.visible_ids()
    for lv in range(1, grid.n_levels):
        kids = grid.children(lv - 1)[gt.cells[vis, lv - 1]]
        levels.append(level(np.repeat(vis, kids.shape[1]), kids.reshape(-1)))
    return RouteState(levels, ())
