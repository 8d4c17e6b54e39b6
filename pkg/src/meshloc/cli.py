"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error.  The
``MESHLOC_THREADS`` environment variable caps worker threads.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .numcore.checkpoint import CheckpointError, file_digest
from .scene.mesh import MeshFormatError, load_mesh
from .scene.poses import PoseFormatError, read_estimates, write_estimates

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
log = logging.getLogger("meshloc")


def worker_count() -> int:
    raw = os.environ.get("MESHLOC_THREADS")
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MESHLOC_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"MESHLOC_THREADS must be a positive integer, got {raw!r}")
    return n


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_generate_scene(args) -> int:
    from .synth.io import save_scene_dir
    from .synth.render import render_rgbd
    from .synth.scenes import generate_scene

    cfg = _config(args.config)
    scene = generate_scene(args.seed, cfg.scene)
    ids = [f"{k:06d}" for k in range(len(scene.trajectory))]

    def render(k):
        return render_rgbd(scene, scene.frame_configurations[k], scene.trajectory[k], frame_id=ids[k])

    with ThreadPoolExecutor(worker_count()) as pool:
        frames = list(pool.map(render, range(len(ids))))
    save_scene_dir(args.out, scene.mesh, scene.camera, scene.palette, frames,
                   extra=dict(seed=args.seed, params=cfg.to_dict()["scene"]))
    print(f"wrote {len(frames)} frames and a {scene.mesh.n_vertices}-vertex mesh to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import init_model, save_model
    from .synth.io import load_scene_dir
    from .training import SceneDataset, run_schedule

    cfg = _config(args.config)
    sd = load_scene_dir(args.scene_dir)
    frames = [f for f in sd.frames if f.configuration == 0][:: cfg.schedule.frame_stride]
    if not frames:
        raise ValueError(f"{args.scene_dir}: no frames in the training configuration")
    model = init_model(cfg)
    data = SceneDataset.build(sd.mesh, frames, sd.camera, model.grid)
    log_path = args.log or str(args.checkpoint) + ".log.tsv"
    hist = run_schedule([data], model, cfg.schedule, cfg.loss, cfg.augment, cfg.seed, log_path,
                        on_epoch=lambda s: print(s.row(), flush=True))
    save_model(args.checkpoint, model, extra=dict(mesh_digest=sd.mesh.digest(), epochs=len(hist)))
    print(f"saved {args.checkpoint}; log in {log_path}")
    return EXIT_OK


def cmd_embed_mesh(args) -> int:
    from .model import load_model
    from .synth.pipeline import DescriptorCache, save_descriptor_cache

    model, _ = load_model(args.checkpoint)
    mesh = load_mesh(args.mesh)
    desc = model.embed_mesh(mesh)
    cache = DescriptorCache(desc.descriptors.data.astype(float), tuple(model.cfg.gnn.split), file_digest(args.mesh),
                            file_digest(args.checkpoint))
    save_descriptor_cache(args.cache, cache)
    print(f"cached {mesh.n_vertices} x {cache.descriptors.shape[1]} descriptors in {args.cache}")
    return EXIT_OK


def cmd_localize(args) -> int:
    from .synth.io import DataError, load_scene_dir
    from .synth.pipeline import load_descriptor_cache, run_localize
    from .matcher import write_correspondence_dump

    sd = load_scene_dir(args.frames)
    mesh_file = Path(args.frames) / sd.meta.get("mesh", "mesh.ply")
    cfg = _config(args.config)
    model = desc = None
    if not args.oracle:
        from .model import load_model

        if not args.checkpoint or not args.cache:
            raise ConfigError("learned localization needs --checkpoint and --cache")
        model, _ = load_model(args.checkpoint)
        cache = load_descriptor_cache(args.cache)
        if cache.checkpoint_digest != file_digest(args.checkpoint):
            raise DataError(f"{args.cache} was built with a different checkpoint")
        if cache.mesh_digest != file_digest(mesh_file):
            raise DataError(f"{args.cache} was built for a different mesh than {mesh_file}")
        desc = cache.levels()
        cfg = model.cfg
    from .image.grid import build_grid_hierarchy

    grid = build_grid_hierarchy(cfg.grid.width, cfg.grid.height, cfg.grid.levels)

    def one(fr):
        # depth read from 16-bit files is quantized, so the exact planar fit of in-memory oracle runs does not apply
        return run_localize(sd.mesh, fr, sd.camera, grid, "oracle" if args.oracle else "learned", model, desc,
                            cfg.solver, depth_sampling=cfg.match.depth_sampling)

    with ThreadPoolExecutor(worker_count()) as pool:
        results = list(pool.map(one, sd.frames))
    write_estimates(args.poses_out, {fr.frame_id: r.pose for fr, r in zip(sd.frames, results)})
    if args.dump:
        Path(args.dump).mkdir(parents=True, exist_ok=True)
        for fr, r in zip(sd.frames, results):
            write_correspondence_dump(Path(args.dump) / f"{fr.frame_id}.txt", r.correspondences)
    n_ok = sum(r.pose is not None for r in results)
    print(f"localized {n_ok}/{len(results)} frames; poses in {args.poses_out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pose.metrics import aggregate_metrics, format_table, frame_metrics
    from .report import write_metrics
    from .synth.io import load_scene_dir

    est = read_estimates(args.poses)
    sd = load_scene_dir(args.ground_truth)
    frames = [frame_metrics(est.get(fr.frame_id), fr.pose, fr.depth, sd.camera, fr.frame_id) for fr in sd.frames]
    rec = aggregate_metrics(frames)
    write_metrics(args.report, {args.name: rec}, frames)
    sys.stdout.write(format_table({args.name: rec}))
    return EXIT_OK


def cmd_report(args) -> int:
    from .pose.metrics import format_table
    from .report import frames_path, plot_summary, read_frames, read_metrics

    records = read_metrics(args.metrics)
    fp = frames_path(args.metrics)
    frames = read_frames(fp) if fp.exists() else None
    paths = plot_summary(records, args.plot_out, frames)
    sys.stdout.write(format_table(records))
    for p in paths:
        print(f"figure: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshloc", description="Mesh-based RGB-D camera relocalization.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate-scene", help="render a synthetic scene directory")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_generate_scene)

    s = sub.add_parser("train", help="train the networks on a scene directory")
    s.add_argument("--config")
    s.add_argument("--scene-dir", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--log")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("embed-mesh", help="cache vertex descriptors of a mesh")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--cache", required=True)
    s.set_defaults(fn=cmd_embed_mesh)

    s = sub.add_parser("localize", help="estimate poses for the frames of a scene directory")
    s.add_argument("--checkpoint")
    s.add_argument("--cache")
    s.add_argument("--frames", required=True, help="scene directory holding the query frames")
    s.add_argument("--poses-out", required=True)
    s.add_argument("--oracle", action="store_true", help="use ground-truth embeddings")
    s.add_argument("--config", help="solver settings for oracle runs")
    s.add_argument("--dump", help="directory for per-frame correspondence dumps")
    s.set_defaults(fn=cmd_localize)

    s = sub.add_parser("evaluate", help="score estimated poses against ground truth")
    s.add_argument("--poses", required=True)
    s.add_argument("--ground-truth", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--name", default="meshloc")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("report", help="print a metrics table and plot it")
    s.add_argument("--metrics", required=True)
    s.add_argument("--plot-out", required=True)
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .numcore.tensor import ShapeError
    from .synth.io import DataError
    from .synth.pipeline import CacheError

    try:
        worker_count()
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CacheError, CheckpointError, MeshFormatError, PoseFormatError, ShapeError, OSError,
            ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
