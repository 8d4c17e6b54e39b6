"""Matching losses: confidence, sibling-margin similarity, offset and norm terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..image.grid import GridHierarchy
from ..matcher import RouteState
from ..numcore import Tensor, as_tensor, clip, getitem, log, norm, relu, reshape, sub, tmean, tsum
from .ground_truth import GroundTruth

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 2.0
    lambda_o: float = 15.0
    lambda_n: float = 0.2
    margins: tuple = (0.35, 0.30, 0.25, 0.20, 0.15, 0.10)

    def __post_init__(self):
        object.__setattr__(self, "margins", tuple(float(m) for m in self.margins))
        if min(self.lambda_s, self.lambda_o, self.lambda_n) <= 0 or min(self.margins) <= 0:
            raise ValueError("loss weights and margins must be positive")
        if any(b >= a for a, b in zip(self.margins, self.margins[1:])):
            raise ValueError("margins must be strictly decreasing")


@dataclass
class LossParts:
    confidence: Tensor
    similarity: Tensor
    offset: Tensor
    norm: Tensor
    offset_empty: bool = False

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("confidence", "similarity", "offset", "norm")}


def _zero(like: Tensor) -> Tensor:
    return as_tensor(np.zeros((), dtype=like.data.dtype))


def similarity_loss(descriptors, cells, gt: GroundTruth, grid: GridHierarchy, weights: LossWeights) -> Tensor:
    """Sibling-margin hinge, summed over levels 1.. and averaged over visible vertices.

    Negatives are the other children of the ground-truth parent, so the term
    is computed with the correct route regardless of what routing predicts.
    """
    vis = gt.visible_ids()
    total = _zero(descriptors[0])
    if len(vis) == 0:
        return total
    for lv in range(1, grid.n_levels):
        pos = gt.cells[vis, lv]
        kids = grid.children(lv - 1)[gt.cells[vis, lv - 1]]
        sib = kids[kids != pos[:, None]].reshape(len(vis), kids.shape[1] - 1)
        e = getitem(descriptors[lv], vis)
        d_pos = norm(sub(e, getitem(cells[lv], pos)), axis=-1)
        w = e.shape[1]
        d_neg = norm(sub(reshape(e, (len(vis), 1, w)), getitem(cells[lv], sib)), axis=-1)
        hinge = relu(reshape(d_pos, (len(vis), 1)) - d_neg + weights.margins[lv - 1])
        total = total + tsum(hinge) / float(len(vis))
    return total


def hit_mask(routes: RouteState, gt: GroundTruth, level: int = -1) -> np.ndarray:
    """Per candidate at ``level``: True when it is the vertex's ground-truth cell."""
    lc = routes.levels[level]
    lv = level % len(routes.levels)
    return gt.visible[lc.vertex] & (lc.cell == gt.cells[lc.vertex, lv])


def offset_loss(pred: Tensor, gt: GroundTruth, routes: RouteState) -> tuple[Tensor, bool]:
    """Squared offset error over correctly routed final candidates, per surviving vertex.

    ``pred`` has one row per candidate of ``routes.final()``.  Returns the
    loss and a flag that is True when no vertex survived routing.
    """
    pred = as_tensor(pred)
    fin = routes.final()
    n_surv = len(np.unique(fin.vertex))
    if n_surv == 0:
        return _zero(pred), True
    if pred.shape != (len(fin), 2):
        raise ValueError(f"expected {len(fin)} offset rows, got {pred.shape}")
    hit = gt.visible[fin.vertex] & (fin.cell == gt.cells[fin.vertex, -1])
    idx = np.nonzero(hit)[0]
    if len(idx) == 0:
        return tsum(pred * 0.0), False
    target = gt.offsets[fin.vertex[idx]].astype(pred.data.dtype)
    err = sub(getitem(pred, idx), target)
    return tsum(err * err) / float(n_surv), False


def bce(p: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = clip(as_tensor(p), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=p.data.dtype)
    return tmean(-(log(p) * y + log(1.0 - p) * (1.0 - y)))


def confidence_targets(routes: RouteState, gt: GroundTruth) -> list[np.ndarray]:
    out = [gt.visible[routes.levels[0].vertex]]
    for lv in range(1, len(routes.levels)):
        out.append(hit_mask(routes, gt, lv))
    return out


def confidence_loss(confidences, gt: GroundTruth, routes: RouteState) -> Tensor:
    """Sum over levels of the mean BCE of every considered candidate.

    ``confidences[l]`` is aligned with ``routes.levels[l]``; a level with no
    considered candidates contributes nothing.
    """
    targets = confidence_targets(routes, gt)
    total = None
    for p, y in zip(confidences, targets):
        if len(y) == 0:
            continue
        term = bce(p, y)
        total = term if total is None else total + term
    return total if total is not None else _zero(as_tensor(confidences[0]))


def norm_loss(descriptors, cells) -> Tensor:
    """Sum over levels of mean vertex-descriptor norm plus mean cell-embedding norm."""
    total = None
    for e, f in zip(descriptors, cells):
        term = tmean(norm(as_tensor(e), axis=-1)) + tmean(norm(as_tensor(f), axis=-1))
        total = term if total is None else total + term
    return total


def total_loss(parts: LossParts, weights: LossWeights = LossWeights()) -> Tensor:
    return (parts.confidence + parts.similarity * weights.lambda_s + parts.offset * weights.lambda_o
            + parts.norm * weights.lambda_n)
