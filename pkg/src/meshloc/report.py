"""Delimited metric tables and matplotlib summaries of a localization run."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pose.metrics import TABLE_COLUMNS, BenchmarkRecord, FrameMetrics, format_table  # noqa: E402

FRAME_COLUMNS = ("frame", "has_prediction", "translation", "rotation_deg", "dcre")


def frames_path(metrics_path) -> Path:
    p = Path(metrics_path)
    return p.with_name(p.stem + ".frames.tsv")


def write_metrics(path, records: dict, frames=None) -> None:
    """Benchmark table at ``path``; per-frame rows in a sibling ``.frames.tsv``."""
    Path(path).write_text(format_table(records, precision=6))
    if frames is not None:
        with frames_path(path).open("w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(FRAME_COLUMNS)
            for f in frames:
                w.writerow([f.frame_id, int(f.has_prediction), repr(f.translation), repr(f.rotation),
                            "nan" if f.dcre is None else repr(f.dcre)])


def read_metrics(path) -> dict:
    rows = list(csv.reader(Path(path).read_text().splitlines(), delimiter="\t"))
    if not rows or tuple(rows[0][1:]) != TABLE_COLUMNS:
        raise ValueError(f"{path}: header does not match {('Method',) + TABLE_COLUMNS}")
    out = {}
    for k, r in enumerate(rows[1:], 2):
        if len(r) != len(TABLE_COLUMNS) + 1:
            raise ValueError(f"{path}: line {k} has {len(r)} fields")
        out[r[0]] = [float(v) for v in r[1:]]
    return out


def read_frames(path) -> list[FrameMetrics]:
    rows = list(csv.reader(Path(path).read_text().splitlines(), delimiter="\t"))
    frames = []
    for r in rows[1:]:
        dcre = float(r[4])
        frames.append(FrameMetrics(float(r[2]), float(r[3]), None if np.isnan(dcre) else dcre, r[1] == "1", r[0]))
    return frames


def plot_summary(records: dict, out, frames=None) -> list[Path]:
    """Bar chart of the benchmark columns, plus error distributions when per-frame rows exist.

    Returns the written image paths; extra figures share the stem of ``out``.
    """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    fig, ax = plt.subplots(figsize=(7, 3.2))
    names = list(records)
    x = np.arange(len(TABLE_COLUMNS))
    w = 0.8 / max(len(names), 1)
    for i, name in enumerate(names):
        vals = records[name].row() if isinstance(records[name], BenchmarkRecord) else records[name]
        ax.bar(x + (i - (len(names) - 1) / 2) * w, vals, w, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(TABLE_COLUMNS, fontsize=8)
    ax.set_ylim(0, 2.05)
    ax.set_ylabel("value")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    written.append(out)

    pred = [f for f in frames or [] if f.has_prediction]
    if pred:
        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        for ax, vals, label, bound in (
            (axes[0], [f.translation for f in pred], "translation error", 0.05),
            (axes[1], [f.rotation for f in pred], "rotation error (deg)", 5.0),
            (axes[2], [f.dcre for f in pred if f.dcre is not None], "DCRE", 0.05),
        ):
            v = np.sort(np.asarray(vals, dtype=float))
            if len(v):
                ax.step(v, np.arange(1, len(v) + 1) / len(v), where="post")
            ax.axvline(bound, color="0.5", ls="--", lw=0.8)
            ax.set_xscale("symlog", linthresh=bound / 10)
            ax.set_xlabel(label)
            ax.set_ylim(0, 1.02)
        axes[0].set_ylabel("fraction of frames")
        fig.tight_layout()
        p = out.with_name(out.stem + "_errors" + out.suffix)
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written


def plot_training_log(log_path, out) -> Path:
    """Per-epoch loss components from a training log."""
    rows = list(csv.DictReader(Path(log_path).read_text().splitlines(), delimiter="\t"))
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ep = np.arange(1, len(rows) + 1)
    for key in ("total", "confidence", "similarity", "offset", "norm"):
        ax.plot(ep, [float(r[key]) for r in rows], label=key, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return Path(out)
