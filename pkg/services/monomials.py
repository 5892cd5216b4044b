"""Graded-lexicographic multi-indices and monomial evaluation."""

from functools import lru_cache
from typing import Tuple

import numpy as np

MultiIndex = Tuple[int, ...]


@lru_cache(maxsize=None)
def multi_indices(dim: int, max_order: int) -> Tuple[MultiIndex, ...]:
    """All multi-indices with |gamma| <= max_order, graded then lexicographic.

    For dim=2, order 2: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
    """
    if dim == 0:
        return ((),)
    indices = []
    for order in range(max_order + 1):
        indices.extend(_exact_order(dim, order))
    return tuple(indices)


def _exact_order(dim, order):
    if dim == 1:
        return [(order,)]
    out = []
    for first in range(order, -1, -1):
        for rest in _exact_order(dim - 1, order - first):
            out.append((first,) + rest)
    return out


def count_indices(dim: int, max_order: int) -> int:
    return len(multi_indices(dim, max_order))


def index_orders(indices) -> np.ndarray:
    return np.array([sum(g) for g in indices], dtype=int)


def power_table(t: np.ndarray, max_power: int) -> np.ndarray:
    """powers[n, j, e] = t[n, j] ** e for e = 0..max_power."""
    t = np.atleast_2d(t)
    powers = np.empty(t.shape + (max_power + 1,))
    powers[..., 0] = 1.0
    for e in range(1, max_power + 1):
        powers[..., e] = powers[..., e - 1] * t
    return powers


def monomial_matrix(t: np.ndarray, indices) -> np.ndarray:
    """Rows are points, columns are t ** gamma for gamma in indices."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    gammas = np.asarray(indices, dtype=int).reshape(len(indices), -1)
    if gammas.shape[1] == 0:
        return np.ones((t.shape[0], len(indices)))
    powers = power_table(t, int(gammas.max(initial=0)))
    out = np.ones((t.shape[0], len(indices)))
    for j in range(gammas.shape[1]):
        out *= powers[:, j, gammas[:, j]]
    return out


def monomial_gradient(t: np.ndarray, indices) -> np.ndarray:
    """d(t ** gamma)/dt_j, shape (points, monomials, dim)."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    gammas = np.asarray(indices, dtype=int).reshape(len(indices), -1)
    dim = gammas.shape[1]
    powers = power_table(t, max(int(gammas.max(initial=0)), 1))
    factors = np.stack([powers[:, j, gammas[:, j]] for j in range(dim)], axis=-1)
    grad = np.empty((t.shape[0], len(indices), dim))
    for j in range(dim):
        lowered = np.maximum(gammas[:, j] - 1, 0)
        d_j = gammas[:, j] * powers[:, j, lowered]
        others = np.prod(np.delete(factors, j, axis=-1), axis=-1) if dim > 1 else 1.0
        grad[:, :, j] = d_j * others
    return grad
