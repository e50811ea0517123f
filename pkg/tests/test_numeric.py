import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tiledattn.errors import NaNError, ShapeError
from tiledattn.memory import AccessCounter
from tiledattn.numeric import (
    SoftmaxStats,
    as_matrix,
    matmul,
    max_abs_diff,
    merge_stats,
    stable_softmax_row,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 64), elements=finite)


def test_matmul_identity(rng):
    a = rng.standard_normal((2, 2))
    np.testing.assert_array_equal(matmul(np.eye(2), a), a)


def test_matmul_hand_example():
    out = matmul([[1, 2], [3, 4]], [[0], [1]])
    np.testing.assert_array_equal(out, [[2.0], [4.0]])


def test_matmul_matches_triple_loop(rng):
    a = rng.standard_normal((5, 3))
    b = rng.standard_normal((3, 4))
    ref = np.zeros((5, 4))
    for i in range(5):
        for j in range(4):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(a, b), ref, rtol=0, atol=1e-14)


def test_matmul_charges_flops():
    c = AccessCounter()
    matmul(np.ones((5, 3)), np.ones((3, 4)), c)
    assert c.flops == 2 * 5 * 3 * 4


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_as_matrix_rejects_nan_and_1d():
    with pytest.raises(NaNError):
        as_matrix([[np.nan]])
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ShapeError):
        as_matrix([[-np.inf]])
    assert as_matrix([[-np.inf]], allow_neg_inf=True)[0, 0] == -np.inf


class TestSoftmax:
    def test_symmetric_pair(self):
        p, s = stable_softmax_row([0.0, 0.0])
        np.testing.assert_array_equal(p, [0.5, 0.5])
        assert (s.m[0], s.l[0]) == (0.0, 2.0)

    def test_masked_entry_forces_one_hot(self):
        p, s = stable_softmax_row([-np.inf, 5.0])
        np.testing.assert_array_equal(p, [0.0, 1.0])
        assert (s.m[0], s.l[0]) == (5.0, 1.0)

    def test_all_masked_row(self):
        p, s = stable_softmax_row([-np.inf, -np.inf])
        np.testing.assert_array_equal(p, [0.0, 0.0])
        assert s.m[0] == -np.inf and s.l[0] == 0.0
        s.validate()

    def test_matches_high_precision_oracle(self):
        x = [1.0, 2.0, 3.0, 4.0]
        with mpmath.workdps(50):
            e = [mpmath.exp(mpmath.mpf(v)) for v in x]
            z = sum(e)
            ref = [float(t / z) for t in e]
        p, _ = stable_softmax_row(x)
        np.testing.assert_allclose(p, ref, rtol=1e-15, atol=0)

    def test_nan_rejected(self):
        with pytest.raises(NaNError):
            stable_softmax_row([0.0, np.nan])

    def test_no_overflow_for_large_scores(self):
        p, s = stable_softmax_row([1000.0, 1000.0])
        np.testing.assert_array_equal(p, [0.5, 0.5])
        assert math.isfinite(s.logsumexp()[0])

    @given(vectors)
    def test_nonnegative_and_sums_to_one(self, x):
        p, _ = stable_softmax_row(x)
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) <= 1e-12

    @given(vectors, st.floats(-100, 100))
    def test_shift_invariance(self, x, c):
        p, s = stable_softmax_row(x)
        p2, s2 = stable_softmax_row(x + c)
        np.testing.assert_allclose(p2, p, rtol=1e-12, atol=1e-300)
        assert abs(s2.m[0] - (s.m[0] + c)) <= 1e-12 * max(1.0, abs(s.m[0] + c))

    def test_shift_exact_when_representable(self):
        # integral shift of integer scores keeps every difference exact
        x = np.array([1.0, -3.0, 7.0, 2.0])
        p, _ = stable_softmax_row(x)
        p2, _ = stable_softmax_row(x + 64.0)
        np.testing.assert_array_equal(p2, p)


def _stats(x):
    _, s = stable_softmax_row(x)
    return s.m[0], s.l[0]


class TestMerge:
    def test_identity_element(self):
        assert merge_stats(-np.inf, 0.0, 3.0, 2.0) == (3.0, 2.0)
        assert merge_stats(3.0, 2.0, -np.inf, 0.0) == (3.0, 2.0)

    def test_concatenation_example(self):
        m, l = merge_stats(*_stats([1.0, 2.0]), *_stats([3.0, 4.0]))
        m_ref, l_ref = _stats([1.0, 2.0, 3.0, 4.0])
        assert m == m_ref
        assert abs(l - l_ref) <= 1e-14 * l_ref

    @settings(max_examples=200)
    @given(arrays(np.float64, st.integers(1, 1024), elements=finite),
           arrays(np.float64, st.integers(1, 1024), elements=finite))
    def test_reconstructs_concatenation(self, a, b):
        m, l = merge_stats(*_stats(a), *_stats(b))
        m_ref, l_ref = _stats(np.concatenate([a, b]))
        assert m == m_ref
        assert abs(l - l_ref) <= 1e-14 * l_ref * 4

    @given(vectors, vectors)
    def test_order_insensitive(self, a, b):
        ab = merge_stats(*_stats(a), *_stats(b))
        ba = merge_stats(*_stats(b), *_stats(a))
        assert ab[0] == ba[0]
        assert abs(ab[1] - ba[1]) <= 1e-15 * ab[1]

    def test_accumulator_rescaled(self, rng):
        x = rng.standard_normal(10) * 5
        v = rng.standard_normal((10, 3))
        parts = []
        for sl in (slice(0, 4), slice(4, 10)):
            m = x[sl].max()
            w = np.exp(x[sl] - m)
            parts.append((m, w.sum(), w @ v[sl]))
        (ma, la, acc_a), (mb, lb, acc_b) = parts
        m, l, acc = merge_stats(np.array([ma]), np.array([la]), np.array([mb]), np.array([lb]),
                                acc_a[None, :], acc_b[None, :])
        p, _ = stable_softmax_row(x)
        np.testing.assert_allclose(acc[0] / l[0], p @ v, atol=1e-14)

    def test_vector_rows_with_empty_row(self):
        m, l = merge_stats(np.array([-np.inf, 1.0]), np.array([0.0, 1.0]),
                           np.array([-np.inf, 0.0]), np.array([0.0, 1.0]))
        assert m[0] == -np.inf and l[0] == 0.0
        SoftmaxStats(m, l).validate()


def test_stats_validate_rejects_inconsistent():
    with pytest.raises(ValueError):
        SoftmaxStats([0.0], [0.0]).validate()
    with pytest.raises(ShapeError):
        SoftmaxStats([0.0, 1.0], [1.0])


def test_max_abs_diff_matching_neg_inf():
    assert max_abs_diff([[-np.inf, 1.0]], [[-np.inf, 1.5]]) == 0.5
