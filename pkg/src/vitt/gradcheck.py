"""Central finite-difference oracle for analytic gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ParameterSet, Tensor, no_grad


def numeric_grad(loss_fn: Callable[[], Tensor], param: Tensor, index: tuple, h: float = 1e-5) -> float:
    """d loss / d param[index] by central differences, no graph recorded."""
    orig = param.data[index]
    with no_grad():
        param.data[index] = orig + h
        up = loss_fn().item()
        param.data[index] = orig - h
        down = loss_fn().item()
    param.data[index] = orig
    return (up - down) / (2.0 * h)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """||a - n|| / max(||a||, ||n||), 0 when both are below ``floor``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: ParameterSet | dict[str, Tensor],
    rng: np.random.Generator,
    h: float = 1e-5,
    max_entries: int | None = 8,
) -> dict[str, float]:
    """Compare backprop against finite differences for every named parameter.

    At most ``max_entries`` entries of each parameter are sampled (all when None). Returns the
    per-parameter relative error of the sampled gradient vectors.
    """
    items = list(params.items())
    for _, t in items:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    errors = {}
    for name, t in items:
        analytic_full = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = rng.choice(t.size, size=t.size if max_entries is None else min(max_entries, t.size), replace=False)
        idxs = [np.unravel_index(i, t.shape) for i in flat]
        analytic = np.array([analytic_full[i] for i in idxs])
        numeric = np.array([numeric_grad(loss_fn, t, i, h) for i in idxs])
        errors[name] = relative_error(analytic, numeric)
    for _, t in items:
        t.grad = None
    return errors
