"""Fourth-order central finite differences."""

from __future__ import annotations

import numpy as np

_C1 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_OFFSETS = (-2.0, -1.0, 1.0, 2.0)


def relative_steps(x: np.ndarray, scale: float) -> np.ndarray:
    return scale * (1.0 + np.abs(x))


def derivative(f, x: np.ndarray, scale: float) -> np.ndarray:
    """Partial derivatives of an array-valued ``f`` along every coordinate of ``x``.

    Returns an array of shape ``(len(x),) + f(x).shape`` whose leading axis is
    the differentiation direction.
    """
    x = np.asarray(x, dtype=float)
    steps = relative_steps(x, scale)
    out = None
    for i in range(x.size):
        h = steps[i]
        acc = None
        for c, o in zip(_C1, _OFFSETS):
            xp = x.copy()
            xp[i] += o * h
            val = c * np.asarray(f(xp), dtype=float)
            acc = val if acc is None else acc + val
        acc = acc / h
        if out is None:
            out = np.empty((x.size,) + acc.shape)
        out[i] = acc
    return out


def gradient(f, x: np.ndarray, scale: float) -> np.ndarray:
    return derivative(f, x, scale).reshape(np.asarray(x).size)


def jacobian(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Second-order central-difference Jacobian ``J[i, j] = d f_i / d x_j``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = step * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h))
    return np.column_stack(cols)
