"""Vertex-to-cell routing, confidence filtering, offsets and 3D-3D pairs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image.grid import GridHierarchy
from .numcore import Tensor, apply_linear, as_tensor, concat, mul, parameter, sigmoid, sub, tabs, tsum
from .scene.camera import PinholeCamera, backproject_pixels
from .scene.mesh import TriangleMesh


@dataclass(frozen=True)
class MatchConfig:
    beams: tuple = (1, 3, 3, 3, 4, 4)
    threshold: float = 0.5
    depth_sampling: str = "nearest"

    def __post_init__(self):
        object.__setattr__(self, "beams", tuple(int(b) for b in self.beams))
        if any(b < 1 for b in self.beams):
            raise ValueError("beam widths must be >= 1")
        if self.depth_sampling not in ("nearest", "planar"):
            raise ValueError(f"unknown depth sampling {self.depth_sampling!r}")


def init_match_params(widths, rng: np.random.Generator, dtype=np.float64) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    for lv, w in enumerate(widths):
        p[f"match.conf{lv}.W"] = parameter(-np.abs(rng.normal(0, 1.0 / np.sqrt(w), w)), dtype=dtype)
        p[f"match.conf{lv}.b"] = parameter(np.ones(1), dtype=dtype)
    w6 = widths[-1]
    p["match.offset.W"] = parameter(rng.normal(0, 0.1 / np.sqrt(2 * w6), (2, 2 * w6)), dtype=dtype)
    p["match.offset.b"] = parameter(np.zeros(2), dtype=dtype)
    return p


def confidence_of(f, e, level: int, params) -> Tensor:
    """sigmoid(W |f - e| + b) row-wise; f and e are (n, w) or (w,)."""
    f, e = as_tensor(f), as_tensor(e)
    W, b = params[f"match.conf{level}.W"], params[f"match.conf{level}.b"]
    if f.shape[-1] != e.shape[-1] or f.shape[-1] != W.shape[0]:
        raise ValueError(f"width mismatch at level {level}: f {f.shape[-1]}, e {e.shape[-1]}, W {W.shape[0]}")
    logit = tsum(mul(tabs(sub(f, e)), W), axis=-1)
    return sigmoid(logit + (b if f.ndim > 1 else b[0]))


def predict_offset(f, e, params) -> Tensor:
    """Sub-cell position (x, y) in (0, 1)^2 from a level-6 cell and vertex pair."""
    f, e = as_tensor(f), as_tensor(e)
    W = params["match.offset.W"]
    if f.shape[-1] != e.shape[-1] or 2 * f.shape[-1] != W.shape[1]:
        raise ValueError(f"offset head expects width {W.shape[1] // 2}, got f {f.shape[-1]}, e {e.shape[-1]}")
    return sigmoid(apply_linear(W, params["match.offset.b"], concat([f, e], axis=-1)))


def offset_to_pixel(grid: GridHierarchy, cells, offsets) -> np.ndarray:
    lv = grid.n_levels - 1
    g = grid[lv]
    return grid.cell_origin(lv, cells) + np.asarray(offsets) * np.array([g.cell_w, g.cell_h], dtype=np.float64)


# ----------------------------------------------------------------------
# routing


@dataclass
class LevelCandidates:
    """Candidates ranked into the beam at one level, before the confidence cut."""

    vertex: np.ndarray
    cell: np.ndarray
    distance: np.ndarray
    confidence: np.ndarray
    kept: np.ndarray

    def survivors(self) -> "LevelCandidates":
        k = self.kept
        return LevelCandidates(self.vertex[k], self.cell[k], self.distance[k], self.confidence[k], self.kept[k])

    def __len__(self) -> int:
        return len(self.vertex)


@dataclass
class RouteState:
    levels: list = field(default_factory=list)
    beams: tuple = ()

    def final(self) -> LevelCandidates:
        return self.levels[-1].survivors()

    def surviving_vertices(self, level: int = -1) -> np.ndarray:
        lc = self.levels[level]
        return np.unique(lc.vertex[lc.kept])


def _conf_np(f: np.ndarray, e: np.ndarray, level: int, params) -> np.ndarray:
    W = params[f"match.conf{level}.W"].data
    b = params[f"match.conf{level}.b"].data[0]
    z = np.clip(np.abs(f - e) @ W + b, -30.0, 30.0)
    return 1.0 / (1.0 + np.exp(-z))


def top_per_group(group: np.ndarray, score: np.ndarray, k: int) -> np.ndarray:
    """Mask keeping the ``k`` smallest scores within every group (stable ties)."""
    order = np.lexsort((score, group))
    g = group[order]
    start = np.r_[0, np.nonzero(g[1:] != g[:-1])[0] + 1]
    first = np.repeat(start, np.diff(np.r_[start, len(g)]))
    keep = np.zeros(len(group), dtype=bool)
    keep[order[(np.arange(len(g)) - first) < k]] = True
    return keep


def route_vertices(descriptors, cells, grid: GridHierarchy, params, beams, threshold: float = 0.5,
                   vertices=None) -> RouteState:
    """Route vertices down the grid hierarchy.

    ``descriptors`` and ``cells`` are per-level arrays (V x w_l and
    n_l x w_l).  Level 0 keeps a vertex when its whole-image confidence
    reaches ``threshold``; every later level expands the surviving cells
    into their children, keeps the ``beams[l-1]`` nearest per vertex and
    drops candidates whose confidence falls below ``threshold``.
    """
    n_levels = grid.n_levels
    beams = tuple(beams)
    if len(beams) != n_levels - 1:
        raise ValueError(f"need {n_levels - 1} beam widths, got {len(beams)}")
    V = len(descriptors[0])
    verts = np.arange(V) if vertices is None else np.asarray(vertices, dtype=np.int64)
    e0, f0 = descriptors[0][verts], np.broadcast_to(cells[0][0], (len(verts), cells[0].shape[1]))
    conf = _conf_np(f0, e0, 0, params)
    state = RouteState(beams=beams)
    state.levels.append(LevelCandidates(verts, np.zeros(len(verts), np.int64), np.linalg.norm(e0 - f0, axis=1),
                                        conf, conf >= threshold))
    for lv in range(1, n_levels):
        prev = state.levels[-1]
        pv, pc = prev.vertex[prev.kept], prev.cell[prev.kept]
        table = grid.children(lv - 1)
        k = table.shape[1]
        cv = np.repeat(pv, k)
        cc = table[pc].reshape(-1)
        e, f = descriptors[lv][cv], cells[lv][cc]
        dist = np.linalg.norm(e - f, axis=1)
        sel = top_per_group(cv, dist, beams[lv - 1])
        cv, cc, dist, e, f = cv[sel], cc[sel], dist[sel], e[sel], f[sel]
        order = np.lexsort((dist, cv))
        cv, cc, dist, e, f = cv[order], cc[order], dist[order], e[order], f[order]
        conf = _conf_np(f, e, lv, params)
        state.levels.append(LevelCandidates(cv, cc, dist, conf, conf >= threshold))
    return state


# ----------------------------------------------------------------------
# correspondences


@dataclass
class CorrespondenceSet:
    world: np.ndarray
    camera: np.ndarray
    vertex: np.ndarray
    cell: np.ndarray
    pixel: np.ndarray
    depth: np.ndarray
    static: np.ndarray
    confidence: np.ndarray

    def __len__(self) -> int:
        return len(self.vertex)

    def subset(self, mask) -> "CorrespondenceSet":
        return CorrespondenceSet(*(getattr(self, f)[mask] for f in self.__dataclass_fields__))

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, np.int64)
        return cls(z3, z3, zi, zi, np.zeros((0, 2)), np.zeros(0), np.zeros(0, bool), np.zeros(0))

    @classmethod
    def from_arrays(cls, world, camera, static=None, **kw) -> "CorrespondenceSet":
        n = len(world)
        return cls(np.asarray(world, float), np.asarray(camera, float),
                   kw.get("vertex", np.arange(n)), kw.get("cell", np.zeros(n, np.int64)),
                   kw.get("pixel", np.zeros((n, 2))), kw.get("depth", np.asarray(camera, float)[:, 2]),
                   np.ones(n, bool) if static is None else np.asarray(static, bool),
                   kw.get("confidence", np.ones(n)))


_PATCH = np.array([(dx, dy) for dy in range(-1, 3) for dx in range(-1, 3)])
_DESIGN = np.column_stack([np.ones(16), _PATCH[:, 0], _PATCH[:, 1]]).astype(np.float64)
_PINV = np.linalg.pinv(_DESIGN)


def sample_depth(depth: np.ndarray, pixels: np.ndarray, mode: str = "nearest", planar_tol: float = 1e-7) -> np.ndarray:
    """Depth at continuous pixel positions; 0 marks an unusable sample.

    ``nearest`` reads the pixel containing the position.  ``planar`` fits an
    affine function to the inverse depth of the surrounding 4 x 4 pixel
    centers, rejects patches that are not planar (edges, corners,
    discontinuities) and evaluates the fit at the exact position.
    """
    H, W = depth.shape
    u, v = pixels[:, 0], pixels[:, 1]
    if mode == "nearest":
        i = np.clip(np.floor(v).astype(np.int64), 0, H - 1)
        j = np.clip(np.floor(u).astype(np.int64), 0, W - 1)
        return depth[i, j]
    j0 = np.floor(u - 0.5).astype(np.int64)
    i0 = np.floor(v - 0.5).astype(np.int64)
    out = np.zeros(len(u))
    ok = (j0 - 1 >= 0) & (j0 + 2 < W) & (i0 - 1 >= 0) & (i0 + 2 < H)
    if not np.any(ok):
        return out
    jj = j0[ok, None] + _PATCH[None, :, 0]
    ii = i0[ok, None] + _PATCH[None, :, 1]
    d = depth[ii, jj]
    valid = np.all(d > 0, axis=1)
    inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)
    coef = inv @ _PINV.T
    resid = np.abs(inv - coef @ _DESIGN.T).max(axis=1)
    planar = valid & (resid <= planar_tol * np.abs(inv).mean(axis=1))
    # local coordinates: pixel center (j0 + 0.5, i0 + 0.5) is the patch origin
    lx = u[ok] - (j0[ok] + 0.5)
    ly = v[ok] - (i0[ok] + 0.5)
    inv_at = coef[:, 0] + coef[:, 1] * lx + coef[:, 2] * ly
    good = planar & (inv_at > 0)
    res = np.zeros(ok.sum())
    res[good] = 1.0 / inv_at[good]
    out[ok] = res
    return out


def extract_correspondences(routes: RouteState, offsets: np.ndarray, depth: np.ndarray, cam: PinholeCamera,
                            mesh: TriangleMesh, grid: GridHierarchy, depth_sampling: str = "nearest") -> CorrespondenceSet:
    """Pair each surviving (vertex, final cell) with a back-projected pixel.

    ``offsets`` holds one (x, y) row per surviving final-level candidate, in
    the order of ``routes.final()``.  ``mesh`` supplies world positions and
    static flags.  Pairs without a usable depth are dropped.
    """
    fin = routes.final()
    if len(fin) == 0:
        return CorrespondenceSet.empty()
    offsets = np.asarray(offsets, dtype=np.float64).reshape(len(fin), 2)
    px = offset_to_pixel(grid, fin.cell, offsets)
    px[:, 0] = np.clip(px[:, 0], 0.0, np.nextafter(cam.width, 0))
    px[:, 1] = np.clip(px[:, 1], 0.0, np.nextafter(cam.height, 0))
    d = sample_depth(depth, px, depth_sampling)
    ok = d > 0
    cam_pts = np.zeros((len(fin), 3))
    if np.any(ok):
        cam_pts[ok] = backproject_pixels(cam, px[ok, 0], px[ok, 1], d[ok])
    return CorrespondenceSet(
        world=mesh.positions[fin.vertex[ok]],
        camera=cam_pts[ok],
        vertex=fin.vertex[ok],
        cell=fin.cell[ok],
        pixel=px[ok],
        depth=d[ok],
        static=mesh.static[fin.vertex[ok]],
        confidence=fin.confidence[ok],
    )


def write_correspondence_dump(path, corr: CorrespondenceSet) -> None:
    rows = ["# vertex_id level6_cell u v depth x_w y_w z_w static confidence"]
    for k in range(len(corr)):
        u, v = corr.pixel[k]
        x, y, z = corr.world[k]
        rows.append(f"{corr.vertex[k]} {corr.cell[k]} {u:.6f} {v:.6f} {corr.depth[k]:.9g} "
                    f"{x:.9g} {y:.9g} {z:.9g} {int(corr.static[k])} {corr.confidence[k]:.6f}")
    Path(path).write_text("\n".join(rows) + "\n")
