"""Procedural rooms: a subdivided shell plus boxes, a color field and a camera loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene.camera import PinholeCamera, RigidTransform, look_at
from ..scene.mesh import PaletteEntry, SemanticPalette, TriangleMesh

DEFAULT_CAMERA = PinholeCamera(fx=400.0, fy=400.0, cx=256.0, cy=144.0, width=512, height=288)


@dataclass(frozen=True)
class SceneParams:
    room: tuple = (4.0, 4.0, 2.5)
    n_objects: int = 6
    dynamic_fraction: float = 0.3
    spacing: float = 0.125
    n_configurations: int = 3
    n_frames: int = 20
    eye_height: float = 1.4
    arc: float = 1.0  # fraction of the full loop covered by the trajectory
    texture: float = 0.15  # amplitude of independent per-vertex color noise

    def __post_init__(self):
        object.__setattr__(self, "room", tuple(float(r) for r in self.room))
        if self.n_objects < 1:
            raise ValueError("need at least one object")
        if not 0 <= self.dynamic_fraction <= 1:
            raise ValueError("dynamic fraction must be in [0, 1]")
        if min(self.room) <= 0 or self.spacing <= 0:
            raise ValueError("room size and spacing must be positive")
        if self.texture < 0:
            raise ValueError("texture amplitude must be >= 0")
        if self.n_configurations < 1 or self.n_frames < 1:
            raise ValueError("need at least one configuration and one frame")
        if min(self.room[:2]) < 1.5 or self.room[2] < 1.0:
            raise ValueError(f"room {self.room} is too small to hold objects")


@dataclass(frozen=True)
class SceneObject:
    name: str
    dynamic: bool
    center: np.ndarray
    size: np.ndarray


@dataclass(frozen=True)
class Configuration:
    """Rigid motions of dynamic objects (object index -> 4x4) and an illumination change."""

    motions: dict = field(default_factory=dict)
    gain: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class SyntheticScene:
    mesh: TriangleMesh
    palette: SemanticPalette
    vertex_object: np.ndarray  # -1 for the room shell
    objects: tuple
    configurations: tuple
    trajectory: tuple
    frame_configurations: tuple
    camera: PinholeCamera
    seed: int
    params: SceneParams

    def mesh_for(self, configuration: int) -> TriangleMesh:
        """The mesh with dynamic objects moved as in ``configuration``."""
        conf = self.configurations[configuration]
        if not conf.motions:
            return self.mesh
        P, N = self.mesh.positions.copy(), self.mesh.normals.copy()
        for k, M in conf.motions.items():
            sel = self.vertex_object == k
            P[sel] = P[sel] @ M[:3, :3].T + M[:3, 3]
            N[sel] = N[sel] @ M[:3, :3].T
        return self.mesh.with_positions(P, N)


def _color_field(rng: np.random.Generator):
    """RGB function of world position: three sinusoid bands, coarse to fine.

    The fine band (wavelength about 0.8 units) keeps neighbouring image cells
    distinguishable at the finest grid level.
    """
    scales, amps = (1.1, 2.9, 8.0), (0.25, 0.12, 0.12)
    freqs = [rng.normal(0, 1, (3, 3)) for _ in scales]
    freqs = [f / np.linalg.norm(f, axis=1, keepdims=True) * s for f, s in zip(freqs, scales)]
    phases = rng.uniform(0, 2 * np.pi, (len(scales), 3))

    def color(p):
        out = 0.5 + sum(a * np.sin(p @ f.T + ph) for a, f, ph in zip(amps, freqs, phases))
        return np.clip(out, 0.0, 1.0)

    return color


def _patch(origin, du, dv, nu: int, nv: int, normal):
    """Grid of (nu+1) x (nv+1) vertices spanning origin + [0,1] du + [0,1] dv."""
    a, b = np.meshgrid(np.linspace(0, 1, nu + 1), np.linspace(0, 1, nv + 1), indexing="ij")
    P = origin + a.reshape(-1, 1) * du + b.reshape(-1, 1) * dv
    idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    q00, q10, q01, q11 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    F = np.concatenate([np.stack([q00, q10, q11], 1), np.stack([q00, q11, q01], 1)])
    # wind so the face normal agrees with ``normal``
    if np.dot(np.cross(du, dv), normal) < 0:
        F = F[:, ::-1]
    N = np.broadcast_to(np.asarray(normal, float), P.shape)
    return P, F, N


def _box_patches(lo, hi, spacing):
    """Five faces of an axis-aligned box (no bottom), outward normals."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ext = hi - lo
    n = np.maximum(1, np.ceil(ext / spacing).astype(int))
    ex, ey, ez = np.eye(3) * ext
    return [
        _patch(np.array([lo[0], lo[1], hi[2]]), ex, ey, n[0], n[1], (0, 0, 1)),
        _patch(lo, ex, ez, n[0], n[2], (0, -1, 0)),
        _patch(np.array([lo[0], hi[1], lo[2]]), ex, ez, n[0], n[2], (0, 1, 0)),
        _patch(lo, ey, ez, n[1], n[2], (-1, 0, 0)),
        _patch(np.array([hi[0], lo[1], lo[2]]), ey, ez, n[1], n[2], (1, 0, 0)),
    ]


def _room_patches(room, spacing):
    """Floor, ceiling and four walls with normals facing the interior."""
    L, W, H = room
    nx, ny, nz = (max(1, int(np.ceil(s / spacing))) for s in room)
    ex, ey, ez = np.array([L, 0, 0.0]), np.array([0, W, 0.0]), np.array([0, 0, H])
    o = np.zeros(3)
    return {
        "floor": [_patch(o, ex, ey, nx, ny, (0, 0, 1))],
        "ceiling": [_patch(ez, ex, ey, nx, ny, (0, 0, -1))],
        "wall": [
            _patch(o, ex, ez, nx, nz, (0, 1, 0)),
            _patch(ey, ex, ez, nx, nz, (0, -1, 0)),
            _patch(o, ey, ez, ny, nz, (1, 0, 0)),
            _patch(ex, ey, ez, ny, nz, (-1, 0, 0)),
        ],
    }


def _semantic_colors(n: int) -> np.ndarray:
    """``n`` well separated colors on a hue circle."""
    h = np.arange(n) / n
    return np.clip(np.stack([np.abs(h * 6 - 3) - 1, 2 - np.abs(h * 6 - 2), 2 - np.abs(h * 6 - 4)], 1), 0, 1)


def _place_objects(rng, room, n, keep_out):
    """Random box footprints along the walls, away from the camera loop."""
    L, W, H = room
    boxes = []
    for _ in range(n):
        for _attempt in range(200):
            size = np.array([rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8), rng.uniform(0.3, min(1.0, 0.6 * H))])
            c = np.array([rng.uniform(size[0] / 2 + 0.05, L - size[0] / 2 - 0.05),
                          rng.uniform(size[1] / 2 + 0.05, W - size[1] / 2 - 0.05)])
            r = np.hypot(*((c - [L / 2, W / 2]) / [L / 2, W / 2]))
            if r < keep_out:
                continue
            if all(np.any(np.abs(c - b[0][:2]) > (size[:2] + b[1][:2]) / 2 + 0.05) for b in boxes):
                boxes.append((np.array([c[0], c[1], size[2] / 2]), size))
                break
        else:
            raise ValueError(f"cannot place {n} objects in a {L} x {W} room")
    return boxes


def _trajectory(room, p: SceneParams, rng):
    L, W, H = room
    center = np.array([L / 2, W / 2, 0.0])
    theta0 = rng.uniform(0, 2 * np.pi)
    poses = []
    for k in range(p.n_frames):
        th = theta0 + 2 * np.pi * p.arc * k / p.n_frames
        eye = center + np.array([0.2 * L * np.cos(th), 0.2 * W * np.sin(th), min(p.eye_height, 0.7 * H)])
        look = th + np.pi + 0.35 * np.sin(3 * th)
        target = center + np.array([0.45 * L * np.cos(look), 0.45 * W * np.sin(look), 0.35 * H])
        poses.append(look_at(eye, target))
    return tuple(poses)


def generate_scene(seed: int, params: SceneParams = SceneParams(), camera: PinholeCamera = DEFAULT_CAMERA) -> SyntheticScene:
    """Deterministic synthetic room for ``seed``."""
    rng = np.random.default_rng(seed)
    color = _color_field(rng)
    room = params.room
    boxes = _place_objects(rng, room, params.n_objects, keep_out=0.55)
    n_dyn = int(round(params.dynamic_fraction * params.n_objects))
    dynamic = np.zeros(params.n_objects, dtype=bool)
    dynamic[rng.permutation(params.n_objects)[:n_dyn]] = True

    names = ["floor", "ceiling", "wall"] + [f"object{k}" for k in range(params.n_objects)]
    sem = _semantic_colors(len(names))
    palette = SemanticPalette(tuple(PaletteEntry(nm, tuple(sem[i]), bool(i >= 3 and dynamic[i - 3]))
                                    for i, nm in enumerate(names)))
    tints = rng.uniform(0, 1, (params.n_objects, 3))

    Ps, Fs, Ns, Cs, Ss, Os = [], [], [], [], [], []
    offset = 0

    def add(patches, label, obj, tint=None):
        nonlocal offset
        for P, F, N in patches:
            c = np.clip(color(P) + rng.uniform(-params.texture, params.texture, P.shape), 0.0, 1.0)
            if tint is not None:
                c = 0.5 * c + 0.5 * tint
            Ps.append(P), Fs.append(F + offset), Ns.append(N), Cs.append(c)
            Ss.append(np.broadcast_to(sem[label], P.shape)), Os.append(np.full(len(P), obj))
            offset += len(P)

    for i, (name, patches) in enumerate(_room_patches(room, params.spacing).items()):
        add(patches, i, -1)
    objects = []
    for k, (c, size) in enumerate(boxes):
        add(_box_patches(c - size / 2, c + size / 2, params.spacing), 3 + k, k, tints[k])
        objects.append(SceneObject(names[3 + k], bool(dynamic[k]), c, size))

    semantics = np.concatenate(Ss)
    mesh = TriangleMesh(np.concatenate(Ps), np.concatenate(Ns), np.concatenate(Cs), semantics,
                        np.concatenate(Fs), palette.static_mask(semantics))

    confs = [Configuration()]
    for _ in range(1, params.n_configurations):
        motions = {}
        for k in np.nonzero(dynamic)[0]:
            a = np.deg2rad(rng.uniform(-30, 30))
            R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
            shift = np.r_[rng.uniform(-0.4, 0.4, 2), 0.0]
            ctr = objects[k].center
            M = np.eye(4)
            M[:3, :3] = R
            M[:3, 3] = ctr + shift - R @ ctr
            motions[int(k)] = M
        confs.append(Configuration(motions, float(rng.uniform(0.8, 1.2)), float(rng.uniform(-0.05, 0.05))))

    traj = _trajectory(room, params, rng)
    frame_conf = tuple(k % params.n_configurations for k in range(params.n_frames))
    return SyntheticScene(mesh, palette, np.concatenate(Os), tuple(objects), tuple(confs), traj, frame_conf,
                          camera, int(seed), params)
