"""Dense float64 primitives and the decomposable softmax statistics.

A "matrix" here is simply a 2-D, C-contiguous ``numpy.float64`` array.
``as_matrix`` is the single gate that enforces that shape and rejects NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NaNError, ShapeError

NEG_INF = -np.inf


def as_matrix(x, name="matrix", allow_neg_inf=False) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if np.isnan(a).any():
        raise NaNError(f"{name} contains NaN")
    if not allow_neg_inf and not np.isfinite(a).all():
        raise ShapeError(f"{name} contains non-finite entries")
    if allow_neg_inf and np.isposinf(a).any():
        raise ShapeError(f"{name} contains +inf")
    return a


def matmul(a, b, counter=None) -> np.ndarray:
    """Dense product ``a @ b``; charges ``2*rows*inner*cols`` FLOPs to ``counter``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if counter is not None:
        counter.flops += 2 * a.shape[0] * a.shape[1] * b.shape[1]
    return a @ b


def safe_max(m):
    """Replace -inf with 0 so that ``x - safe_max(m)`` never forms -inf - -inf."""
    return np.where(np.isneginf(m), 0.0, m)


def exp_shift(x, m):
    """exp(x - m) with rows broadcast; an all -inf row maps to zeros."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1 and np.ndim(x) == 2:
        m = m[:, None]
    return np.exp(x - safe_max(m))


@dataclass
class SoftmaxStats:
    """Per-row running max ``m`` and shifted denominator ``l``.

    ``l[i] == 0`` exactly when ``m[i] == -inf`` (nothing seen yet, or the
    whole row is masked).
    """

    m: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        self.m = np.atleast_1d(np.asarray(self.m, dtype=np.float64))
        self.l = np.atleast_1d(np.asarray(self.l, dtype=np.float64))
        if self.m.shape != self.l.shape:
            raise ShapeError(f"m has shape {self.m.shape} but l has {self.l.shape}")

    @classmethod
    def empty(cls, n):
        return cls(np.full(n, NEG_INF), np.zeros(n))

    def __len__(self):
        return self.m.shape[0]

    def validate(self):
        if np.isnan(self.m).any() or np.isnan(self.l).any():
            raise NaNError("softmax statistics contain NaN")
        if (self.l < 0).any():
            raise ValueError("negative softmax denominator")
        if not np.array_equal(self.l == 0, np.isneginf(self.m)):
            raise ValueError("l == 0 must coincide with m == -inf")
        return self

    def logsumexp(self):
        with np.errstate(divide="ignore"):
            return self.m + np.log(self.l)


def stable_softmax_row(x):
    """Max-shifted softmax of a vector. Returns ``(probs, SoftmaxStats)``.

    A row that is entirely -inf yields zero probabilities with ``m=-inf, l=0``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError("softmax needs a non-empty vector")
    if np.isnan(x).any():
        raise NaNError("softmax input contains NaN")
    if np.isposinf(x).any():
        raise ShapeError("softmax input contains +inf")
    m = x.max()
    f = exp_shift(x, m)
    l = f.sum()
    probs = f / l if l > 0 else f
    return probs, SoftmaxStats(m, l)


def merge_stats(m_a, l_a, m_b, l_b, acc_a=None, acc_b=None):
    """Combine statistics of two disjoint chunks of the same rows.

    ``acc_*`` are optional un-normalised accumulators ``sum_j exp(x_j - m) v_j``
    taken relative to their own ``m``; they are rescaled alongside ``l``.
    Merging with the empty statistics ``(-inf, 0)`` is the identity.
    """
    m_a = np.asarray(m_a, dtype=np.float64)
    m_b = np.asarray(m_b, dtype=np.float64)
    m = np.maximum(m_a, m_b)
    alpha = exp_shift(m_a, m)
    beta = exp_shift(m_b, m)
    l = alpha * l_a + beta * l_b
    if acc_a is None and acc_b is None:
        return m, l
    if np.ndim(m) == 1:
        alpha, beta = alpha[:, None], beta[:, None]
    acc = alpha * acc_a + beta * acc_b
    return m, l, acc


def max_abs_diff(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    both_inf = np.isneginf(a) & np.isneginf(b)
    diff = np.abs(np.where(both_inf, 0.0, a) - np.where(both_inf, 0.0, b))
    return float(diff.max())
