"""Dense 64-bit primitives shared by the rest of the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C order.
Probability zero is carried as ``-inf`` in log space, never as a sentinel.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

NEG_INF = -math.inf


class ShapeError(ValueError):
    pass


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise ShapeError(f"expected shape ({rows}, {cols}), got {m.shape}")
    return m


def log_sum_exp(values: Iterable[float]) -> float:
    """Return ``log(sum(exp(v)))`` with a max shift; all ``-inf`` gives ``-inf``."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("empty reduction")
    m = max(vals)
    if m == NEG_INF:
        return NEG_INF
    if m == math.inf:
        return math.inf
    return m + math.log(math.fsum(math.exp(v - m) for v in vals))


def log_add(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def softmax_row(logits) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite logits")
    e = np.exp(v - v.max())
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of a T x K matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def grad_check(
    f: Callable[[np.ndarray], float],
    point,
    analytic,
    step: float = 1e-5,
) -> float:
    """Max relative error between ``analytic`` and a central-difference gradient.

    The error for coordinate ``i`` is
    ``|a_i - n_i| / max(1, |a_i|, |n_i|)``.
    """
    x = np.array(point, dtype=np.float64).ravel()
    a = np.asarray(analytic, dtype=np.float64).ravel()
    if a.shape != x.shape:
        raise ShapeError(f"gradient shape {a.shape} does not match point shape {x.shape}")
    worst = 0.0
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        fp = float(f(x.copy()))
        x[i] = orig - step
        fm = float(f(x.copy()))
        x[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite objective when probing coordinate {i}")
        num = (fp - fm) / (2.0 * step)
        err = abs(a[i] - num) / max(1.0, abs(a[i]), abs(num))
        worst = max(worst, err)
    return worst
