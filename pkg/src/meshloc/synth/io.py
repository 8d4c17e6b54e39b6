"""Scene directories: metadata JSON, PLY mesh, pose blocks and PNG frames.

Layout::

    scene.json          intrinsics, depth scale, palette, frame list
    mesh.ply            map mesh (configuration 0), world frame
    poses.txt           ground-truth world-to-camera pose per frame
    frames/<id>-color.png   8-bit RGB
    frames/<id>-depth.png   16-bit depth, value = depth * depth_scale
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..scene.camera import PinholeCamera
from ..scene.frames import FrameRecord
from ..scene.mesh import MeshFormatError, SemanticPalette, TriangleMesh, load_mesh, save_mesh
from ..scene.poses import PoseFormatError, read_trajectory, write_trajectory

DEPTH_SCALE = 5000.0
SCENE_FORMAT = "meshloc-scene"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class SceneDir:
    mesh: TriangleMesh
    camera: PinholeCamera
    palette: SemanticPalette
    frames: list
    meta: dict


def write_png_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8), "RGB").save(path)


def write_png_depth(path, depth: np.ndarray, scale: float = DEPTH_SCALE) -> None:
    raw = np.round(depth * scale)
    if raw.max(initial=0) > 65535:
        raise DataError(f"depth {depth.max():.3f} exceeds the 16-bit range at scale {scale}")
    Image.fromarray(raw.astype(np.uint16)).save(path)


def read_png_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_png_depth(path, scale: float = DEPTH_SCALE) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / scale


def save_scene_dir(out, mesh: TriangleMesh, camera: PinholeCamera, palette: SemanticPalette, frames,
                   extra: dict | None = None) -> Path:
    out = Path(out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    save_mesh(out / "mesh.ply", mesh)
    entries, poses = [], {}
    for fr in frames:
        rgb_name, depth_name = f"frames/{fr.frame_id}-color.png", f"frames/{fr.frame_id}-depth.png"
        write_png_rgb(out / rgb_name, fr.rgb)
        write_png_depth(out / depth_name, fr.depth)
        entries.append(dict(id=fr.frame_id, configuration=fr.configuration, rgb=rgb_name, depth=depth_name))
        poses[fr.frame_id] = fr.pose
    write_trajectory(out / "poses.txt", poses)
    meta = dict(format=SCENE_FORMAT, version=1, intrinsics=camera.to_dict(), depth_scale=DEPTH_SCALE,
                palette=palette.to_list(), frames=entries, mesh="mesh.ply", poses="poses.txt")
    meta.update(extra or {})
    (out / "scene.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out


def load_scene_dir(path, frame_ids=None) -> SceneDir:
    """Read a scene directory; any structural problem raises :class:`DataError`."""
    root = Path(path)
    try:
        meta = json.loads((root / "scene.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{root}: cannot read scene.json: {exc}") from exc
    if meta.get("format") != SCENE_FORMAT:
        raise DataError(f"{root}: scene.json is not a {SCENE_FORMAT} file")
    try:
        camera = PinholeCamera(**meta["intrinsics"])
        palette = SemanticPalette.from_list(meta["palette"])
        mesh = load_mesh(root / meta.get("mesh", "mesh.ply"), palette)
        poses = read_trajectory(root / meta.get("poses", "poses.txt"))
    except (KeyError, TypeError, OSError, MeshFormatError, PoseFormatError, ValueError) as exc:
        raise DataError(f"{root}: {exc}") from exc
    scale = float(meta.get("depth_scale", DEPTH_SCALE))
    wanted = None if frame_ids is None else {str(f) for f in frame_ids}
    frames = []
    for entry in meta.get("frames", []):
        fid = str(entry["id"])
        if wanted is not None and fid not in wanted:
            continue
        if fid not in poses:
            raise DataError(f"{root}: frame {fid} has no pose in {meta.get('poses', 'poses.txt')}")
        try:
            rgb = read_png_rgb(root / entry["rgb"])
            depth = read_png_depth(root / entry["depth"], scale)
            frames.append(FrameRecord(rgb, depth, poses[fid], int(entry.get("configuration", 0)), fid))
        except (OSError, ValueError) as exc:
            raise DataError(f"{root}: frame {fid}: {exc}") from exc
        if (rgb.shape[1], rgb.shape[0]) != (camera.width, camera.height):
            raise DataError(f"{root}: frame {fid} is {rgb.shape[1]}x{rgb.shape[0]}, "
                            f"intrinsics say {camera.width}x{camera.height}")
    return SceneDir(mesh, camera, palette, frames, meta)
