"""Pose files.

Trajectory files hold one block per frame: a ``frame <id>`` line followed
by four rows of a row-major 4 x 4 world-to-camera matrix; blocks are
separated by blank lines.  Estimate files hold one frame per line: the
frame id and 16 row-major values, or the id and ``nan`` when the frame has
no prediction.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .camera import RigidTransform


class PoseFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory(path, poses: dict) -> None:
    blocks = []
    for fid, T in poses.items():
        M = T.matrix()
        rows = "\n".join(" ".join(_fmt(v) for v in row) for row in M)
        blocks.append(f"frame {fid}\n{rows}")
    Path(path).write_text("\n\n".join(blocks) + "\n")


def read_trajectory(path) -> dict:
    lines = Path(path).read_text().splitlines()
    poses: dict = {}
    i = 0
    while i < len(lines):
        ln = lines[i].strip()
        if not ln or ln.startswith("#"):
            i += 1
            continue
        tok = ln.split()
        if tok[0] != "frame" or len(tok) != 2:
            raise PoseFormatError(f"line {i + 1}: expected 'frame <id>'")
        fid = tok[1]
        try:
            M = np.array([[float(v) for v in lines[i + k].split()] for k in range(1, 5)])
        except (IndexError, ValueError):
            raise PoseFormatError(f"line {i + 1}: frame {fid} needs four numeric rows") from None
        if M.shape != (4, 4):
            raise PoseFormatError(f"line {i + 1}: frame {fid} is not a 4x4 matrix")
        poses[fid] = RigidTransform.from_matrix(M)
        i += 5
    return poses


def write_estimates(path, estimates: dict) -> None:
    out = []
    for fid, T in estimates.items():
        if T is None:
            out.append(f"{fid} nan")
        else:
            out.append(f"{fid} " + " ".join(_fmt(v) for v in T.matrix().reshape(-1)))
    Path(path).write_text("\n".join(out) + "\n")


def read_estimates(path) -> dict:
    est: dict = {}
    for k, ln in enumerate(Path(path).read_text().splitlines(), 1):
        tok = ln.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) == 2 and tok[1].lower() == "nan":
            est[tok[0]] = None
            continue
        if len(tok) != 17:
            raise PoseFormatError(f"line {k}: expected frame id and 16 values or 'nan'")
        try:
            est[tok[0]] = RigidTransform.from_matrix(np.array([float(v) for v in tok[1:]]).reshape(4, 4))
        except ValueError:
            raise PoseFormatError(f"line {k}: non-numeric matrix entry") from None
    return est
