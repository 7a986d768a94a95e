"""Hot gather/scatter kernels behind a switchable backend.

Message passing spends most of its time accumulating per-edge values into
per-node rows. The numba backend JIT-compiles those loops; the numpy
backend uses unbuffered ufunc.at calls. Both iterate edges in the same
order, so results are bit-identical across backends.

Selection: set the environment variable ``GLIND_BACKEND`` to ``numba``,
``numpy``, or ``auto`` (default). ``auto`` picks numba when it imports.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ConfigError

_ENV_VAR = "GLIND_BACKEND"
_impl = None


def _resolve():
    global _impl
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ConfigError(f"{_ENV_VAR} must be 'auto', 'numba', or 'numpy', got {choice!r}")
    if choice == "numpy":
        from . import numpy_impl as impl
    elif choice == "numba":
        from . import numba_impl as impl
    else:
        try:
            from . import numba_impl as impl
        except ImportError:
            from . import numpy_impl as impl
    _impl = impl
    return impl


def active_backend() -> str:
    """Name of the backend in use ('numba' or 'numpy')."""
    return (_impl or _resolve()).NAME


def reset_backend() -> None:
    """Drop the resolved backend so the next call re-reads the env var."""
    global _impl
    _impl = None


def scatter_add_rows(index: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """Accumulate each row of ``values`` into ``out[index[e]]``; out is (n_rows, d)."""
    return (_impl or _resolve()).scatter_add_rows(index, values, n_rows)


def scatter_add_vec(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """Accumulate scalar ``values[e]`` into ``out[index[e]]``; out is (n,)."""
    return (_impl or _resolve()).scatter_add_vec(index, values, n)


def segment_max(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """Per-segment maximum of scalar values; empty segments stay at -inf."""
    return (_impl or _resolve()).segment_max(index, values, n)
