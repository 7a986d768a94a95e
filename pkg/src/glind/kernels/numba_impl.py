"""numba-compiled kernel loops.

Edge accumulation order matches numpy_impl (plain ascending edge index),
keeping the two backends bit-identical.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _scatter_add_rows(index, values, out):
    for e in range(index.shape[0]):
        i = index[e]
        for j in range(values.shape[1]):
            out[i, j] += values[e, j]


@njit(cache=True)
def _scatter_add_vec(index, values, out):
    for e in range(index.shape[0]):
        out[index[e]] += values[e]


@njit(cache=True)
def _segment_max(index, values, out):
    for e in range(index.shape[0]):
        i = index[e]
        if values[e] > out[i]:
            out[i] = values[e]


def scatter_add_rows(index, values, n_rows):
    out = np.zeros((n_rows, values.shape[1]), dtype=np.float64)
    _scatter_add_rows(np.ascontiguousarray(index), np.ascontiguousarray(values), out)
    return out


def scatter_add_vec(index, values, n):
    out = np.zeros(n, dtype=np.float64)
    _scatter_add_vec(np.ascontiguousarray(index), np.ascontiguousarray(values), out)
    return out


def segment_max(index, values, n):
    out = np.full(n, -np.inf)
    _segment_max(np.ascontiguousarray(index), np.ascontiguousarray(values), out)
    return out
