"""Ground-truth attention.

``standard_forward`` / ``standard_backward`` materialise the full score and
probability matrices. ``memeff_forward`` / ``memeff_backward`` stream over
keys one column at a time and keep only O(n) auxiliary state.

HBM charges for the standard path (elements, queries ``n``, keys ``nk``):

    forward   reads  Q, K (n*d + nk*d), S (n*nk), P and V (n*nk + nk*d)
              writes S, P (2*n*nk), O (n*d)
    backward  reads  P, dO | dO, V | P, dP | dS, K | dS, Q
              writes dV | dP | dS | dQ | dK

Scaling and masking are fused into the S write; dropout multipliers are
regenerated from the positional hash wherever they are needed, so they
add no traffic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AttnConfig
from .errors import ShapeError
from .numeric import SoftmaxStats, as_matrix, exp_shift, safe_max
from .rng import DropoutRng

# Peak auxiliary elements of the streaming paths are at most C1*n + C2*d.
MEMEFF_AUX_C1 = 4
MEMEFF_AUX_C2 = 2


@dataclass
class ForwardArtifacts:
    o: np.ndarray
    s: np.ndarray
    p: np.ndarray
    p_dropped: np.ndarray
    stats: SoftmaxStats


@dataclass
class Gradients:
    dq: np.ndarray
    dk: np.ndarray
    dv: np.ndarray

    def max_abs_diff(self, other: "Gradients") -> float:
        return max(
            float(np.abs(a - b).max(initial=0.0))
            for a, b in ((self.dq, other.dq), (self.dk, other.dk), (self.dv, other.dv))
        )


class AuxMeter:
    """Tracks live auxiliary (non input/output) elements and their peak."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def alloc(self, size):
        self.live += size
        self.peak = max(self.peak, self.live)

    def free(self, size):
        self.live -= size


def _check_qkv(q, k, v, cfg: AttnConfig):
    q = as_matrix(q, "Q")
    k = as_matrix(k, "K")
    v = as_matrix(v, "V")
    if q.shape[1] != cfg.d or k.shape[1] != cfg.d or v.shape[1] != cfg.d:
        raise ShapeError(f"head dimension mismatch: Q {q.shape}, K {k.shape}, V {v.shape}, d={cfg.d}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"K {k.shape} and V {v.shape} disagree on length")
    if q.shape[0] != cfg.n:
        raise ShapeError(f"Q has {q.shape[0]} rows but cfg.n={cfg.n}")
    return q, k, v


def masked_scores(q, k, cfg: AttnConfig):
    s = cfg.tau * (q @ k.T)
    keep = cfg.mask.keep(np.arange(q.shape[0]), np.arange(k.shape[0]))
    return np.where(keep, s, -np.inf)


def dropout_matrix(cfg: AttnConfig, nq, nk):
    return DropoutRng(cfg.seed).scale_block(np.arange(nq), np.arange(nk), cfg.p_drop)


def standard_forward(q, k, v, cfg: AttnConfig, counter=None) -> ForwardArtifacts:
    q, k, v = _check_qkv(q, k, v, cfg)
    n, d = q.shape
    nk = k.shape[0]
    s = masked_scores(q, k, cfg)
    m = s.max(axis=1)
    f = exp_shift(s, m)
    l = f.sum(axis=1)
    p = f / np.where(l > 0, l, 1.0)[:, None]
    p_dropped = p * dropout_matrix(cfg, n, nk) if cfg.p_drop > 0 else p
    o = p_dropped @ v
    if counter is not None:
        counter.hbm_read_elems += n * d + nk * d + n * nk + n * nk + nk * d
        counter.hbm_write_elems += 2 * n * nk + n * d
        # QK^T, scale, softmax (max, sub, exp, sum, div), dropout, PV
        counter.flops += 2 * n * nk * d + n * nk + 5 * n * nk + 2 * n * nk * d
        if cfg.p_drop > 0:
            counter.flops += n * nk
    return ForwardArtifacts(o, s, p, p_dropped, SoftmaxStats(m, l))


def standard_backward(art: ForwardArtifacts, q, k, v, do, cfg: AttnConfig, counter=None) -> Gradients:
    q, k, v = _check_qkv(q, k, v, cfg)
    do = as_matrix(do, "dO")
    if do.shape != art.o.shape:
        raise ShapeError(f"dO has shape {do.shape}, expected {art.o.shape}")
    n, d = q.shape
    nk = k.shape[0]
    dv = art.p_dropped.T @ do
    dp = do @ v.T
    if cfg.p_drop > 0:
        dp = dp * dropout_matrix(cfg, n, nk)
    big_d = (art.p * dp).sum(axis=1)
    ds = art.p * (dp - big_d[:, None])
    dq = cfg.tau * (ds @ k)
    dk = cfg.tau * (ds.T @ q)
    if counter is not None:
        counter.hbm_read_elems += 5 * n * nk + 3 * n * d + 2 * nk * d
        counter.hbm_write_elems += 2 * n * nk + n * d + 2 * nk * d
        # dV, dP, D (mul+add), dS (sub+mul), dQ, dK with their tau scalings
        counter.flops += 8 * n * nk * d + 4 * n * nk + n * d + nk * d
        if cfg.p_drop > 0:
            counter.flops += 2 * n * nk  # P*Z for dV, dP*Z
    return Gradients(dq, dk, dv)


def memeff_forward(q, k, v, cfg: AttnConfig, aux: AuxMeter | None = None):
    """Two sweeps over keys: first the row statistics, then the output.

    Returns ``(o, stats)`` where ``stats`` holds the per-row max and the
    max-shifted normaliser.
    """
    if cfg.p_drop != 0:
        raise ValueError("the streaming reference does not model dropout")
    q, k, v = _check_qkv(q, k, v, cfg)
    n, d = q.shape
    aux = aux if aux is not None else AuxMeter()
    rows = np.arange(n)

    m = np.full(n, -np.inf)
    l = np.zeros(n)
    aux.alloc(2 * n)
    for j in range(k.shape[0]):
        aux.alloc(2 * n)  # score column and new max
        s = cfg.tau * (q @ k[j])
        s = np.where(cfg.mask.keep(rows, [j])[:, 0], s, -np.inf)
        m_new = np.maximum(m, s)
        l = exp_shift(m, m_new) * l + exp_shift(s, m_new)
        m = m_new
        aux.free(2 * n)

    o = np.zeros((n, d))
    l_safe = np.where(l > 0, l, 1.0)
    m_safe = safe_max(m)
    for j in range(k.shape[0]):
        aux.alloc(2 * n)  # score column and weights
        s = cfg.tau * (q @ k[j])
        s = np.where(cfg.mask.keep(rows, [j])[:, 0], s, -np.inf)
        w = np.exp(s - m_safe) / l_safe
        o += np.outer(w, v[j])
        aux.free(2 * n)
    aux.free(2 * n)
    return o, SoftmaxStats(m, l)


def memeff_backward(q, k, v, o, do, stats: SoftmaxStats, cfg: AttnConfig, aux: AuxMeter | None = None):
    """Column sweep over keys; ``D_i`` is the d-length product ``do_i . o_i``."""
    if cfg.p_drop != 0:
        raise ValueError("the streaming reference does not model dropout")
    q, k, v = _check_qkv(q, k, v, cfg)
    o = as_matrix(o, "O")
    do = as_matrix(do, "dO")
    if o.shape != q.shape or do.shape != q.shape:
        raise ShapeError("O and dO must match Q's shape")
    n, d = q.shape
    aux = aux if aux is not None else AuxMeter()
    rows = np.arange(n)
    m_safe = safe_max(stats.m)
    l_safe = np.where(stats.l > 0, stats.l, 1.0)

    aux.alloc(n)
    big_d = np.einsum("ij,ij->i", do, o)
    dq = np.zeros((n, d))
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for j in range(k.shape[0]):
        aux.alloc(3 * n + 2 * d)  # P, dP, dS columns; dv_j, dk_j
        s = cfg.tau * (q @ k[j])
        s = np.where(cfg.mask.keep(rows, [j])[:, 0], s, -np.inf)
        p = np.exp(s - m_safe) / l_safe
        dp = do @ v[j]
        ds = p * (dp - big_d)
        dv[j] = p @ do
        dk[j] = cfg.tau * (ds @ q)
        dq += cfg.tau * np.outer(ds, k[j])
        aux.free(3 * n + 2 * d)
    aux.free(n)
    return Gradients(dq, dk, dv)


def softmax_grad_dot(p, dp):
    """``D_i = P_i: . dP_i:``, the n-length reduction form."""
    return (p * dp).sum(axis=1)


def output_grad_dot(do, o):
    """``D_i = do_i . o_i``, the d-length form used by the streaming and tiled paths."""
    return np.einsum("ij,ij->i", do, o)
