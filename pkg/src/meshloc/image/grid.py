"""Hierarchical image partition.

Level 0 is the whole frame, level 1 splits it into left and right halves,
and every further level splits each cell into 2 x 2 children, so level
``l >= 1`` has ``2**l`` columns and ``2**(l-1)`` rows.  Cells are indexed
row-major: ``row * cols + col``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridLevel:
    level: int
    cols: int
    rows: int
    cell_w: int
    cell_h: int

    @property
    def count(self) -> int:
        return self.cols * self.rows


@dataclass(frozen=True)
class GridHierarchy:
    width: int
    height: int
    levels: tuple

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def counts(self) -> list[int]:
        return [g.count for g in self.levels]

    def __getitem__(self, level: int) -> GridLevel:
        return self.levels[level]

    def locate(self, level: int, u, v) -> np.ndarray:
        u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
        if np.any((u < 0) | (u >= self.width) | (v < 0) | (v >= self.height)):
            raise ValueError("pixel outside the image")
        g = self.levels[level]
        col = np.floor(u / g.cell_w).astype(np.int64)
        row = np.floor(v / g.cell_h).astype(np.int64)
        return row * g.cols + col

    def parent(self, level: int, cell) -> np.ndarray:
        """Index at ``level - 1`` of the cell containing ``cell``."""
        g, p = self.levels[level], self.levels[level - 1]
        cell = np.asarray(cell)
        row, col = cell // g.cols, cell % g.cols
        return (row // (g.rows // p.rows)) * p.cols + col // (g.cols // p.cols)

    def children(self, level: int) -> np.ndarray:
        """(count_level, k) table of the level+1 cells inside each cell."""
        g, c = self.levels[level], self.levels[level + 1]
        rc, rr = c.cols // g.cols, c.rows // g.rows
        cell = np.arange(g.count)
        row, col = cell // g.cols, cell % g.cols
        out = [(row * rr + dr) * c.cols + col * rc + dc for dr in range(rr) for dc in range(rc)]
        return np.stack(out, axis=1)

    def cell_origin(self, level: int, cell) -> np.ndarray:
        g = self.levels[level]
        cell = np.asarray(cell)
        return np.stack([(cell % g.cols) * g.cell_w, (cell // g.cols) * g.cell_h], axis=-1).astype(np.float64)

    def pixel_cells(self, level: int) -> np.ndarray:
        """H x W map of the level's cell index for every pixel."""
        g = self.levels[level]
        rows = np.arange(self.height) // g.cell_h
        cols = np.arange(self.width) // g.cell_w
        return rows[:, None] * g.cols + cols[None, :]


def build_grid_hierarchy(width: int = 512, height: int = 288, n_levels: int = 7) -> GridHierarchy:
    if n_levels < 2:
        raise ValueError("need at least two levels")
    fc, fr = 2 ** (n_levels - 1), 2 ** (n_levels - 2)
    if width % fc or height % fr:
        raise ValueError(f"{width}x{height} cannot be split into {fc}x{fr} equal cells")
    levels = [GridLevel(0, 1, 1, width, height)]
    for lv in range(1, n_levels):
        cols, rows = 2 ** lv, 2 ** (lv - 1)
        levels.append(GridLevel(lv, cols, rows, width // cols, height // rows))
    return GridHierarchy(width, height, tuple(levels))


def locate_cell(grid: GridHierarchy, level: int, u, v):
    out = grid.locate(level, u, v)
    return int(out) if np.ndim(out) == 0 else out
