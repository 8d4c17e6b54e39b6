"""Point-to-point ICP with gated nearest neighbours from a uniform hash grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene.camera import RigidTransform
from .kabsch import kabsch_batch

_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])


class SpatialHash:
    """Uniform grid over a fixed point set for radius-bounded nearest-neighbour queries."""

    def __init__(self, points, cell: float):
        if cell <= 0:
            raise ValueError("cell size must be positive")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.cell = float(cell)
        if len(self.points) == 0:
            self.lo = np.zeros(3)
            self.dims = np.ones(3, dtype=np.int64)
            self.keys = np.zeros(0, np.int64)
            self.order = np.zeros(0, np.int64)
            return
        self.lo = self.points.min(axis=0)
        ijk = self._cells(self.points)
        self.dims = ijk.max(axis=0) + 1
        keys = self._key(ijk)
        self.order = np.argsort(keys, kind="stable")
        self.keys = keys[self.order]

    def _cells(self, q) -> np.ndarray:
        return np.floor((q - self.lo) / self.cell).astype(np.int64)

    def _key(self, ijk) -> np.ndarray:
        return (ijk[:, 0] * self.dims[1] + ijk[:, 1]) * self.dims[2] + ijk[:, 2]

    def nearest(self, queries, max_dist: float):
        """(index, distance) of the nearest point within ``max_dist``; index -1 when none.

        Exact as long as ``max_dist`` does not exceed the cell size.
        """
        if max_dist > self.cell * (1 + 1e-12):
            raise ValueError("query radius exceeds the grid cell size")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        nq = len(q)
        best_i = np.full(nq, -1, dtype=np.int64)
        best_d2 = np.full(nq, np.inf)
        if nq == 0 or len(self.keys) == 0:
            return best_i, np.sqrt(best_d2)
        base = self._cells(q)
        for off in _OFFSETS:
            c = base + off
            inside = np.all((c >= 0) & (c < self.dims), axis=1)
            qi = np.nonzero(inside)[0]
            if len(qi) == 0:
                continue
            k = self._key(c[qi])
            lo = np.searchsorted(self.keys, k, "left")
            hi = np.searchsorted(self.keys, k, "right")
            cnt = hi - lo
            if cnt.sum() == 0:
                continue
            rep = np.repeat(np.arange(len(qi)), cnt)
            start = np.repeat(np.cumsum(cnt) - cnt, cnt)
            pos = lo[rep] + np.arange(len(rep)) - start
            cand = self.order[pos]
            who = qi[rep]
            d2 = ((self.points[cand] - q[who]) ** 2).sum(axis=1)
            # keep the closest candidate per query, lowest index on ties
            srt = np.lexsort((cand, d2, who))
            who_s = who[srt]
            first = np.r_[True, who_s[1:] != who_s[:-1]]
            w, dd, cc = who_s[first], d2[srt][first], cand[srt][first]
            better = (dd < best_d2[w]) | ((dd == best_d2[w]) & (cc < best_i[w]))
            best_d2[w[better]] = dd[better]
            best_i[w[better]] = cc[better]
        far = best_d2 > max_dist * max_dist
        best_i[far] = -1
        best_d2[far] = np.inf
        return best_i, np.sqrt(best_d2)


def nearest_exhaustive(targets, queries, max_dist: float):
    """Brute-force reference for :meth:`SpatialHash.nearest`."""
    targets = np.asarray(targets, float).reshape(-1, 3)
    queries = np.asarray(queries, float).reshape(-1, 3)
    if len(targets) == 0:
        return np.full(len(queries), -1), np.full(len(queries), np.inf)
    d2 = ((queries[:, None, :] - targets[None]) ** 2).sum(-1)
    idx = d2.argmin(axis=1)
    d = np.sqrt(d2[np.arange(len(queries)), idx])
    far = d > max_dist
    return np.where(far, -1, idx), np.where(far, np.inf, d)


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    tolerance: float = 1e-6  # relative objective improvement
    gate: float = 0.25

    def __post_init__(self):
        if self.max_iterations < 0 or self.tolerance <= 0 or self.gate <= 0:
            raise ValueError("ICP iterations must be >= 0 and tolerances > 0")


@dataclass
class IcpResult:
    transform: RigidTransform
    objectives: list = field(default_factory=list)
    no_matches: bool = False
    iterations: int = 0

    @property
    def objective(self) -> float:
        return self.objectives[-1] if self.objectives else float("inf")


def icp_objective(T: RigidTransform, cloud_cam: np.ndarray, index: SpatialHash, gate: float):
    """Truncated mean squared distance sum(min(d^2, gate^2)) / N and the matches."""
    X = T.inverse().apply(cloud_cam)
    idx, d = index.nearest(X, gate)
    d2 = np.where(idx >= 0, d * d, gate * gate)
    return float(d2.mean()), idx


def icp_refine(T0: RigidTransform, cloud_cam, targets_world, config: IcpConfig = IcpConfig(),
               index: SpatialHash | None = None) -> IcpResult:
    """Align camera-space points to world targets starting from ``T0``.

    Each step matches every cloud point to its nearest target within the
    gate and re-solves the rigid fit on the matches.  The truncated
    objective can only go down; a step that would raise it is rejected and
    ends the loop.
    """
    cloud_cam = np.asarray(cloud_cam, dtype=np.float64).reshape(-1, 3)
    if len(cloud_cam) == 0:
        raise ValueError("ICP needs a non-empty point cloud")
    index = index or SpatialHash(targets_world, config.gate)
    obj, idx = icp_objective(T0, cloud_cam, index, config.gate)
    res = IcpResult(T0, [obj])
    if not np.any(idx >= 0):
        res.no_matches = True
        return res
    T = T0
    for it in range(config.max_iterations):
        m = idx >= 0
        R, t, ok = kabsch_batch(index.points[idx[m]][None], cloud_cam[m][None])
        if not ok[0]:
            break
        cand = RigidTransform(R[0], t[0])
        new_obj, new_idx = icp_objective(cand, cloud_cam, index, config.gate)
        if new_obj > obj:
            break
        T, idx = cand, new_idx
        res.iterations = it + 1
        res.objectives.append(new_obj)
        improvement = (obj - new_obj) / obj if obj > 0 else 0.0
        obj = new_obj
        if obj == 0 or improvement < config.tolerance:
            break
    res.transform = T
    return res
