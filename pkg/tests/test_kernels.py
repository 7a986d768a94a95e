import numpy as np

from glind.kernels import numba_impl, numpy_impl


def test_scatter_add_rows_matches_dense_oracle(rng):
    idx = rng.integers(0, 7, size=40).astype(np.int64)
    vals = rng.standard_normal((40, 3))
    dense = np.zeros((7, 40))
    for e, i in enumerate(idx):
        dense[i, e] = 1.0
    expected = dense @ vals
    assert np.allclose(numpy_impl.scatter_add_rows(idx, vals, 7), expected)
    assert np.allclose(numba_impl.scatter_add_rows(idx, vals, 7), expected)


def test_backends_bit_identical(rng):
    idx = rng.integers(0, 11, size=300).astype(np.int64)
    vals = rng.standard_normal((300, 5)) * 1e3
    a = numpy_impl.scatter_add_rows(idx, vals, 11)
    b = numba_impl.scatter_add_rows(idx, vals, 11)
    assert np.array_equal(a, b)

    vec = rng.standard_normal(300)
    assert np.array_equal(numpy_impl.scatter_add_vec(idx, vec, 11),
                          numba_impl.scatter_add_vec(idx, vec, 11))
    assert np.array_equal(numpy_impl.segment_max(idx, vec, 11),
                          numba_impl.segment_max(idx, vec, 11))


def test_empty_edge_set():
    idx = np.zeros(0, dtype=np.int64)
    vals = np.zeros((0, 4))
    for impl in (numpy_impl, numba_impl):
        out = impl.scatter_add_rows(idx, vals, 3)
        assert out.shape == (3, 4)
        assert np.all(out == 0.0)


def test_segment_max_empty_segments_stay_minus_inf():
    idx = np.array([1, 1], dtype=np.int64)
    vals = np.array([2.0, 5.0])
    for impl in (numpy_impl, numba_impl):
        out = impl.segment_max(idx, vals, 3)
        assert out[1] == 5.0
        assert np.isneginf(out[0]) and np.isneginf(out[2])
