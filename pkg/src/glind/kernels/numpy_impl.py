"""Pure-numpy kernel fallbacks.

ufunc.at is unbuffered and applies updates in index order, matching the
edge-order loops of the numba backend bit for bit.
"""

import numpy as np

NAME = "numpy"


def scatter_add_rows(index, values, n_rows):
    out = np.zeros((n_rows, values.shape[1]), dtype=np.float64)
    np.add.at(out, index, values)
    return out


def scatter_add_vec(index, values, n):
    out = np.zeros(n, dtype=np.float64)
    np.add.at(out, index, values)
    return out


def segment_max(index, values, n):
    out = np.full(n, -np.inf)
    np.maximum.at(out, index, values)
    return out
