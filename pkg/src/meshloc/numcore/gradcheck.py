"""Central finite-difference verification of backward passes."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward


def relative_deviation(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-6,
    n_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Max relative deviation between backward() and central differences.

    ``f`` rebuilds the scalar from the current parameter values on every
    call.  With ``n_coords`` set, that many coordinates are drawn at random
    across all parameters; otherwise every coordinate is checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("function value is not finite")
    grads = backward(out, params)
    coords = [(name, i) for name, p in params.items() for i in range(p.size)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in pick]
    worst = 0.0
    for name, i in coords:
        flat = params[name].data.reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        fp = f().item()
        flat[i] = old - eps
        fm = f().item()
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"function value not finite when perturbing {name}[{i}]")
        numeric = (fp - fm) / (2 * eps)
        analytic = grads[name].reshape(-1)[i]
        worst = max(worst, float(relative_deviation(np.array(analytic), np.array(numeric), floor)))
    return worst
