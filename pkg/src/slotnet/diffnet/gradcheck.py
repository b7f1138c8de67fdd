"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(f, arrays: list[np.ndarray], index: int, step: float = 1e-5) -> np.ndarray:
    """d f / d arrays[index] by central differences; ``f`` maps arrays to a float."""
    x = arrays[index]
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        keep = flat[k]
        flat[k] = keep + step
        hi = f(arrays)
        flat[k] = keep - step
        lo = f(arrays)
        flat[k] = keep
        gflat[k] = (hi - lo) / (2 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    num = float(np.linalg.norm(a - b))
    den = float(np.linalg.norm(a) + np.linalg.norm(b))
    return 0.0 if den == 0.0 else num / den


def check(fn, arrays: list[np.ndarray], step: float = 1e-5) -> float:
    """Largest relative error between tape and numeric gradients over all inputs.

    ``fn`` takes Tensors and returns a scalar Tensor. Inputs are promoted to
    float64 in place of the originals.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def value(arrs):
        return float(fn(*[Tensor(a) for a in arrs]).data)

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward()
    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, rel_error(analytic, numeric_grad(value, arrays, i, step)))
    return worst
