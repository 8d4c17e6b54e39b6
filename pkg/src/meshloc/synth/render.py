"""Z-buffer triangle rasterizer producing RGB and depth."""

from __future__ import annotations

import numpy as np

from ..scene.camera import PinholeCamera, RigidTransform
from ..scene.frames import FrameRecord

NEAR = 1e-3


def clip_near(tri: np.ndarray, attr: np.ndarray, near: float = NEAR):
    """Clip one camera-space triangle against z = near.

    Returns a list of (3x3 vertices, 3xk attributes) triangles; the polygon
    left after clipping is fanned from its first vertex.
    """
    poly, pattr = [], []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        ca, cb = attr[i], attr[(i + 1) % 3]
        ina, inb = a[2] >= near, b[2] >= near
        if ina:
            poly.append(a), pattr.append(ca)
        if ina != inb:
            s = (near - a[2]) / (b[2] - a[2])
            poly.append(a + s * (b - a)), pattr.append(ca + s * (cb - ca))
    return [(np.array([poly[0], poly[k], poly[k + 1]]), np.array([pattr[0], pattr[k], pattr[k + 1]]))
            for k in range(1, len(poly) - 1)]


def _owned(ex: float, ey: float) -> bool:
    # top-left rule for an edge with interior on its positive side: the edge
    # owns its pixels when the inward normal (-ey, ex) points right, or
    # straight down for a horizontal edge
    return ey < 0 or (ey == 0 and ex > 0)


def rasterize(points_cam: np.ndarray, faces: np.ndarray, colors: np.ndarray, cam: PinholeCamera,
              near: float = NEAR) -> tuple[np.ndarray, np.ndarray]:
    """Render camera-space geometry; returns (H x W x 3 color, H x W depth with 0 = empty)."""
    H, W = cam.height, cam.width
    zbuf = np.full((H, W), np.inf)
    cbuf = np.zeros((H, W, 3))
    tris = points_cam[faces]  # F x 3 x 3
    cols = colors[faces]
    z = tris[:, :, 2]
    front = np.all(z >= near, axis=1)
    crossing = ~front & np.any(z >= near, axis=1)
    work = [(tris[f], cols[f]) for f in np.nonzero(front)[0]]
    for f in np.nonzero(crossing)[0]:
        work.extend(clip_near(tris[f], cols[f], near))
    if not work:
        return cbuf, np.zeros((H, W))
    T = np.array([w[0] for w in work])
    C = np.array([w[1] for w in work])
    sx = cam.fx * T[:, :, 0] / T[:, :, 2] + cam.cx
    sy = cam.fy * T[:, :, 1] / T[:, :, 2] + cam.cy
    x0 = np.maximum(np.floor(sx.min(1) - 0.5), 0).astype(int)
    x1 = np.minimum(np.ceil(sx.max(1) - 0.5), W - 1).astype(int)
    y0 = np.maximum(np.floor(sy.min(1) - 0.5), 0).astype(int)
    y1 = np.minimum(np.ceil(sy.max(1) - 0.5), H - 1).astype(int)
    live = np.nonzero((x0 <= x1) & (y0 <= y1))[0]
    for t in live:
        xs, ys = sx[t], sy[t]
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (ys[1] - ys[0]) * (xs[2] - xs[0])
        if area == 0:
            continue
        order = (0, 1, 2) if area > 0 else (0, 2, 1)
        xs, ys = xs[list(order)], ys[list(order)]
        iz = 1.0 / T[t][list(order), 2]
        cz = C[t][list(order)] * iz[:, None]
        area = abs(area)
        px = np.arange(x0[t], x1[t] + 1) + 0.5
        py = np.arange(y0[t], y1[t] + 1) + 0.5
        PX, PY = np.meshgrid(px, py)
        inside = np.ones(PX.shape, dtype=bool)
        wts = []
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            ex, ey = xs[b] - xs[a], ys[b] - ys[a]
            w = ex * (PY - ys[a]) - ey * (PX - xs[a])
            inside &= (w > 0) | ((w == 0) & _owned(ex, ey))
            wts.append(w)
        if not inside.any():
            continue
        lam = np.stack(wts, -1)[inside] / area  # barycentric weights of vertices 0, 1, 2
        inv_z = lam @ iz
        depth = 1.0 / inv_z
        iy = (PY[inside] - 0.5).astype(int)
        ix = (PX[inside] - 0.5).astype(int)
        closer = depth < zbuf[iy, ix]
        if not closer.any():
            continue
        iy, ix = iy[closer], ix[closer]
        zbuf[iy, ix] = depth[closer]
        cbuf[iy, ix] = (lam[closer] @ cz) / inv_z[closer, None]
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return np.clip(cbuf, 0.0, 1.0), depth


def render_rgbd(scene, configuration: int, pose: RigidTransform, cam: PinholeCamera | None = None,
                frame_id: str = "0") -> FrameRecord:
    """Render a synthetic scene in ``configuration`` seen from ``pose``."""
    cam = cam or scene.camera
    mesh = scene.mesh_for(configuration)
    conf = scene.configurations[configuration]
    colors = np.clip(mesh.colors * conf.gain + conf.offset, 0.0, 1.0)
    rgb, depth = rasterize(pose.apply(mesh.positions), mesh.faces, colors, cam)
    return FrameRecord(rgb, depth, pose, configuration, frame_id)
