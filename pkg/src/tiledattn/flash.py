"""Tiled exact attention running against a ``MemoryModel``.

Every HBM transfer goes through ``mem.load`` / ``mem.store`` so the counter
sees exactly the traffic of the tiled schedule, and every on-chip buffer is
reserved so SRAM residency is checked against capacity as the loops run.

FLOPs charged per (br x bc) tile:

    forward   4*br*bc*d + 5*br*bc + 4*br*d + 9*br    (+ br*bc with dropout)
    backward 10*br*bc*d + 6*br*bc + 4*br*d + 3*bc*d  (+ 2*br*bc with dropout)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import AttnConfig
from .errors import NaNError, PlanMismatchError, ShapeError
from .memory import MemoryModel
from .numeric import SoftmaxStats, exp_shift, safe_max
from .reference import Gradients
from .rng import DropoutRng
from .tiling import BlockMask, TilePlan, backward_plan

# Backward peak residency is at most this times br*bc + (br+bc)*d + br + bc.
BACKWARD_AUX_C = 4

Observer = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]


@dataclass
class FlashSaved:
    o: np.ndarray
    stats: SoftmaxStats
    rng: DropoutRng
    plan: TilePlan
    cfg: AttnConfig


def _as_inputs(cfg: AttnConfig, *mats):
    out = []
    for name, x in zip(("Q", "K", "V", "dO"), mats):
        a = np.ascontiguousarray(x, dtype=np.float64)
        if a.shape != (cfg.n, cfg.d):
            raise ShapeError(f"{name} has shape {a.shape}, expected {(cfg.n, cfg.d)}")
        out.append(a)
    return out


def _check_plan(plan: TilePlan, cfg: AttnConfig, mem: MemoryModel):
    if (plan.n, plan.d) != (cfg.n, cfg.d):
        raise PlanMismatchError(f"plan is for n={plan.n}, d={plan.d}; config has n={cfg.n}, d={cfg.d}")
    if plan.m_capacity != mem.m_capacity:
        raise PlanMismatchError(f"plan assumes M={plan.m_capacity}, memory model has M={mem.m_capacity}")


def _scores(mem, qi, kj, cfg, rows, cols, i, j):
    br, bc = len(rows), len(cols)
    with np.errstate(invalid="ignore", over="ignore"):
        s = cfg.tau * (qi @ kj.T)
    mem.flop(2 * br * bc * qi.shape[1] + br * bc)
    if not np.isfinite(s).all():
        raise NaNError(f"non-finite score in block (i={i}, j={j})")
    return np.where(cfg.mask.keep(rows, cols), s, -np.inf)


def _forward(q, k, v, cfg, plan, mem, observer, order, grid) -> FlashSaved:
    q, k, v = _as_inputs(cfg, q, k, v)
    _check_plan(plan, cfg, mem)
    n, d = cfg.n, cfg.d
    rng = DropoutRng(cfg.seed)
    p_drop = cfg.p_drop

    o = np.zeros((n, d))
    l = np.zeros(n)
    m = np.full(n, -np.inf)
    mem.hbm_fill(n * d + 2 * n)

    outer = range(plan.tc) if order is None else order
    if sorted(outer) != list(range(plan.tc)):
        raise ValueError("order must be a permutation of the key blocks")
    for j in outer:
        cs = plan.col_slice(j)
        cols = np.arange(cs.start, cs.stop)
        bc = len(cols)
        kj = mem.load("K_j", k[cs])
        vj = mem.load("V_j", v[cs])
        for i in range(plan.tr):
            if grid is not None and not grid[i, j]:
                continue
            rs = plan.row_slice(i)
            rows = np.arange(rs.start, rs.stop)
            br = len(rows)
            qi = mem.load("Q_i", q[rs])
            oi = mem.load("O_i", o[rs])
            li = mem.load("l_i", l[rs])
            mi = mem.load("m_i", m[rs])

            mem.alloc("S", br * bc)
            s = _scores(mem, qi, kj, cfg, rows, cols, i, j)
            mem.alloc("stats", 4 * br)
            m_blk = s.max(axis=1)
            p = exp_shift(s, m_blk)
            l_blk = p.sum(axis=1)
            mem.flop(4 * br * bc)

            m_new = np.maximum(mi, m_blk)
            alpha = exp_shift(mi, m_new)
            beta = exp_shift(m_blk, m_new)
            l_new = alpha * li + beta * l_blk
            mem.flop(8 * br)

            if p_drop > 0:
                p *= rng.scale_block(rows, cols, p_drop)
                mem.flop(br * bc)
            pv = p @ vj
            mem.flop(2 * br * bc * d)
            num = (li * alpha)[:, None] * oi + beta[:, None] * pv
            o_new = num / np.where(l_new > 0, l_new, 1.0)[:, None]
            mem.flop(4 * br * d + br)
            if np.isnan(o_new).any():
                raise NaNError(f"NaN in output block (i={i}, j={j})")

            mem.store(o, rs, o_new)
            mem.store(l, rs, l_new)
            mem.store(m, rs, m_new)
            mem.free("Q_i", "O_i", "l_i", "m_i", "S", "stats")
        mem.free("K_j", "V_j")
        if observer is not None:
            observer(j, o.copy(), l.copy(), m.copy())
    return FlashSaved(o, SoftmaxStats(m, l), rng, plan, cfg)


def flash_forward(q, k, v, cfg: AttnConfig, plan: TilePlan, mem: MemoryModel,
                  observer: Observer | None = None, order: Sequence[int] | None = None) -> FlashSaved:
    """Tiled forward pass with online softmax.

    ``observer(j, O, l, m)`` receives copies of the HBM state after each outer
    iteration. ``order`` permutes the outer (key block) loop.
    """
    return _forward(q, k, v, cfg, plan, mem, observer, order, None)


def blocksparse_forward(q, k, v, cfg: AttnConfig, plan: TilePlan, bmask: BlockMask, mem: MemoryModel,
                        observer: Observer | None = None) -> FlashSaved:
    """As ``flash_forward`` but tiles whose mask block is False are skipped."""
    bmask.check_plan(plan)
    return _forward(q, k, v, cfg, plan, mem, observer, None, bmask.grid)


def _backward(saved: FlashSaved, q, k, v, do, mem: MemoryModel, bmask: BlockMask | None) -> Gradients:
    cfg = saved.cfg
    q, k, v, do = _as_inputs(cfg, q, k, v, do)
    fwd = saved.plan
    _check_plan(fwd, cfg, mem)
    if saved.o.shape != q.shape or len(saved.stats) != cfg.n:
        raise PlanMismatchError("saved forward state does not match the inputs")
    plan = backward_plan(fwd, slack=mem.slack)
    n, d = cfg.n, cfg.d
    tau, p_drop, rng = cfg.tau, cfg.p_drop, saved.rng
    o = saved.o
    l, m = saved.stats.l, saved.stats.m

    dq = np.zeros((n, d))
    dk = np.zeros((n, d))
    dv = np.zeros((n, d))
    mem.hbm_fill(n * d)  # dQ is accumulated in HBM; dK and dV are written once

    for j in range(plan.tc):
        cs = plan.col_slice(j)
        cols = np.arange(cs.start, cs.stop)
        bc = len(cols)
        kj = mem.load("K_j", k[cs])
        vj = mem.load("V_j", v[cs])
        mem.alloc("dK_j", bc * d)
        mem.alloc("dV_j", bc * d)
        dk_acc = np.zeros((bc, d))
        dv_acc = np.zeros((bc, d))
        for i in range(plan.tr):
            rs = plan.row_slice(i)
            if bmask is not None and not bmask.grid[rs.start // fwd.br, cs.start // fwd.bc]:
                continue
            rows = np.arange(rs.start, rs.stop)
            br = len(rows)

            doi = mem.load("dO_i", do[rs])
            oi = mem.load("O_i", o[rs])
            mem.alloc("D_i", br)
            big_d = np.einsum("ij,ij->i", doi, oi)
            mem.flop(2 * br * d)
            mem.free("O_i")

            qi = mem.load("Q_i", q[rs])
            li = mem.load("l_i", l[rs])
            mi = mem.load("m_i", m[rs])
            mem.alloc("P", br * bc)
            s = _scores(mem, qi, kj, cfg, rows, cols, i, j)
            p = exp_shift(s, mi) / np.where(li > 0, li, 1.0)[:, None]
            mem.flop(3 * br * bc)
            mem.free("l_i", "m_i")

            mem.alloc("dP", br * bc)
            if p_drop > 0:
                # the dP tile briefly holds P * Z
                dv_acc += (p * rng.scale_block(rows, cols, p_drop)).T @ doi
                mem.flop(br * bc)
            else:
                dv_acc += p.T @ doi
            mem.flop(2 * br * bc * d + bc * d)
            dp = doi @ vj.T
            mem.flop(2 * br * bc * d)
            if p_drop > 0:
                dp *= rng.scale_block(rows, cols, p_drop)
                mem.flop(br * bc)
            mem.free("dO_i")

            ds = p * (dp - big_d[:, None])
            mem.flop(2 * br * bc)
            if np.isnan(ds).any() or np.isnan(dv_acc).any():
                raise NaNError(f"NaN in gradient block (i={i}, j={j})")
            mem.free("P", "D_i")

            dqi = mem.load("dQ_i", dq[rs])
            dqi += tau * (ds @ kj)
            mem.flop(2 * br * bc * d + 2 * br * d)
            mem.store(dq, rs, dqi)
            mem.free("dQ_i")

            dk_acc += tau * (ds.T @ qi)
            mem.flop(2 * br * bc * d + 2 * bc * d)
            mem.free("dP", "Q_i")
        mem.store(dk, cs, dk_acc)
        mem.store(dv, cs, dv_acc)
        mem.free("K_j", "V_j", "dK_j", "dV_j")
    return Gradients(dq, dk, dv)


def flash_backward(saved: FlashSaved, q, k, v, do, mem: MemoryModel) -> Gradients:
    """Tiled backward pass that recomputes each probability tile from (l, m).

    ``mem`` must describe the same SRAM size as the forward plan; block sizes
    come from ``tiling.backward_plan``.
    """
    return _backward(saved, q, k, v, do, mem, None)


def blocksparse_backward(saved: FlashSaved, q, k, v, do, bmask: BlockMask, mem: MemoryModel) -> Gradients:
    bmask.check_plan(saved.plan)
    return _backward(saved, q, k, v, do, mem, bmask)
