"""Eigenvalues of real symmetric matrices.

Householder reduction to tridiagonal form followed by the QL iteration with
implicit Wilkinson shifts.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateStructureError, InvalidInputError


def tridiagonalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonally reduce symmetric ``a`` to tridiagonal form.

    Returns the diagonal ``d`` (length n) and sub-diagonal ``e`` (length n-1).
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for j in range(n - 2):
        x = a[j + 1:, j]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn == 0.0:
            continue
        v /= vn
        # apply H = I - 2 v v^T on rows/cols j+1.. from both sides
        sub = a[j + 1:, j:]
        sub -= 2.0 * np.outer(v, v @ sub)
        sub = a[j:, j + 1:]
        sub -= 2.0 * np.outer(sub @ v, v)
    d = np.diag(a).copy()
    e = np.diag(a, -1).copy()
    return d, e


def tridiagonal_eigenvalues(d, e, max_sweeps: int = 60) -> np.ndarray:
    """QL with implicit shifts on a symmetric tridiagonal matrix."""
    d = np.array(d, dtype=float)
    n = d.size
    e = np.concatenate([np.asarray(e, dtype=float), [0.0]])
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= np.finfo(float).eps * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_sweeps:
                raise DegenerateStructureError("QL iteration failed to converge")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return np.sort(d)


def symmetric_spectrum(matrix, sym_tol: float = 1e-10) -> np.ndarray:
    """Ascending eigenvalues of a real symmetric matrix."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > sym_tol * scale:
        raise InvalidInputError("matrix is not symmetric")
    if a.shape[0] == 0:
        return np.zeros(0)
    a = 0.5 * (a + a.T)
    d, e = tridiagonalize(a)
    return tridiagonal_eigenvalues(d, e)
