"""Verification suites and counted-IO sweeps shared by the CLI and the tests."""

from __future__ import annotations

import csv
import itertools
import statistics
import time
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from . import iomodel
from .config import AndMask, AttnConfig, CustomMask, Mask, NoMask
from .errors import CapacityError
from .flash import blocksparse_backward, blocksparse_forward, flash_backward, flash_forward
from .memory import MemoryModel
from .reference import (
    memeff_backward,
    memeff_forward,
    standard_backward,
    standard_forward,
)
from .tiling import BlockMask, backward_plan, make_block_mask, plan_tiles

FWD_TOL = 1e-10
STATS_TOL = 1e-12
SCHEDULE_TOL = 1e-12
GRAD_REL_TOL = 1e-6
# relative gradient errors use max(|analytic|, |numeric|, floor) as denominator
GRAD_REL_FLOOR = 1e-3


def random_inputs(n, d, seed):
    rng = np.random.default_rng(seed)
    return tuple(rng.standard_normal((n, d)) for _ in range(4))


def feasible_m(n, d, m):
    """Smallest M' >= m whose forward and backward tilings both fit."""
    m = max(m, 4 * d)
    while True:
        try:
            backward_plan(plan_tiles(n, d, m))
            return m
        except CapacityError:
            m += 1


def auto_m(n, d, passes=4):
    """A capacity giving roughly ``passes`` key blocks."""
    return feasible_m(n, d, 4 * d * max(1, -(-n // passes)))


def stats_error(got, ref) -> float:
    """Max error over m (absolute) and l (relative to max(1, |l|))."""
    same_inf = np.isneginf(got.m) & np.isneginf(ref.m)
    if not np.array_equal(np.isneginf(got.m), np.isneginf(ref.m)):
        return float("inf")
    dm = np.abs(np.where(same_inf, 0.0, got.m) - np.where(same_inf, 0.0, ref.m))
    dl = np.abs(got.l - ref.l) / np.maximum(1.0, np.abs(ref.l))
    return float(max(dm.max(initial=0.0), dl.max(initial=0.0)))


def with_block_mask(cfg: AttnConfig, bmask: BlockMask) -> AttnConfig:
    return cfg.with_mask(AndMask(cfg.mask, CustomMask(bmask.expand(cfg.n))))


@dataclass
class Check:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tol

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<28} max err {self.error:.3e}  (tol {self.tol:.0e})"


def verify_suite(n, d, m, *, mask: Mask | None = None, p_drop=0.0, seed=0, tau=None,
                 br=None, bc=None, pattern="butterfly", sparsity=0.5, pattern_args=None):
    """Run every equivalence check on one randomly drawn problem."""
    cfg = AttnConfig(n, d, tau=tau, mask=mask or NoMask(), p_drop=p_drop, seed=seed)
    q, k, v, do = random_inputs(n, d, seed)
    plan = plan_tiles(n, d, m, br=br, bc=bc)
    checks = []

    art = standard_forward(q, k, v, cfg)
    snaps = []
    mem = MemoryModel(m)
    saved = flash_forward(q, k, v, cfg, plan, mem, observer=lambda *a: snaps.append(a))
    checks.append(Check("forward O", float(np.abs(saved.o - art.o).max()), FWD_TOL))
    checks.append(Check("forward stats (l, m)", stats_error(saved.stats, art.stats), STATS_TOL))
    pred = iomodel.predict_flash_forward_io(n, d, plan)
    checks.append(Check("forward IO count", 0.0 if pred.matches(mem.counter) else 1.0, 0.0))

    worst = 0.0
    for j, o_j, l_j, m_j in snaps:
        end = plan.col_slice(j).stop
        pre = standard_forward(q, k[:end], v[:end], cfg)
        worst = max(worst, float(np.abs(o_j - pre.o).max()), stats_error(type(saved.stats)(m_j, l_j), pre.stats))
    checks.append(Check("prefix induction", worst, FWD_TOL))

    order = np.random.default_rng(seed + 1).permutation(plan.tc)
    alt = flash_forward(q, k, v, cfg, plan, MemoryModel(m), order=list(order))
    checks.append(Check("schedule invariance", float(np.abs(alt.o - saved.o).max()), SCHEDULE_TOL))

    ref_g = standard_backward(art, q, k, v, do, cfg)
    bmem = MemoryModel(m)
    g = flash_backward(saved, q, k, v, do, bmem)
    checks.append(Check("backward grads", g.max_abs_diff(ref_g), FWD_TOL))
    bpred = iomodel.predict_flash_backward_io(n, d, plan)
    checks.append(Check("backward IO count", 0.0 if bpred.matches(bmem.counter) else 1.0, 0.0))

    bmask = make_block_mask(pattern, plan.tr, plan.tc, plan.br, plan.bc, s=sparsity, seed=seed,
                            **(pattern_args or {}))
    mcfg = with_block_mask(cfg, bmask)
    sart = standard_forward(q, k, v, mcfg)
    smem = MemoryModel(m)
    ssaved = blocksparse_forward(q, k, v, cfg, plan, bmask, smem)
    checks.append(Check("block-sparse forward", float(np.abs(ssaved.o - sart.o).max()), FWD_TOL))
    sg = blocksparse_backward(ssaved, q, k, v, do, bmask, MemoryModel(m))
    checks.append(Check("block-sparse backward", sg.max_abs_diff(standard_backward(sart, q, k, v, do, mcfg)), FWD_TOL))
    spred = iomodel.predict_blocksparse_io(n, d, plan, bmask)
    checks.append(Check("block-sparse IO count", 0.0 if spred.matches(smem.counter) else 1.0, 0.0))

    peak_ok = all(x.counter.peak_resident_elems <= x.limit for x in (mem, bmem, smem))
    checks.append(Check("peak SRAM <= 1.5 M", 0.0 if peak_ok else 1.0, 0.0))
    return checks


def grad_rel_error(analytic, numeric, floor=GRAD_REL_FLOOR):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


def finite_difference_grads(q, k, v, cfg: AttnConfig, weights, h=1e-5):
    """Central differences of ``sum(weights * O)`` through the materialised forward."""

    def objective(qq, kk, vv):
        return float((weights * standard_forward(qq, kk, vv, cfg).o).sum())

    mats = [q.copy(), k.copy(), v.copy()]
    grads = []
    for idx in range(3):
        g = np.zeros_like(mats[idx])
        for pos in np.ndindex(g.shape):
            orig = mats[idx][pos]
            mats[idx][pos] = orig + h
            up = objective(*mats)
            mats[idx][pos] = orig - h
            down = objective(*mats)
            mats[idx][pos] = orig
            g[pos] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def gradcheck(n, d, m=None, *, mask: Mask | None = None, p_drop=0.0, seed=0, tau=None, h=1e-5, zero_do=False):
    """Flash backward against central finite differences. Returns (errors, grads)."""
    cfg = AttnConfig(n, d, tau=tau, mask=mask or NoMask(), p_drop=p_drop, seed=seed)
    m = m if m is not None else auto_m(n, d)
    q, k, v, weights = random_inputs(n, d, seed)
    if zero_do:
        weights = np.zeros_like(weights)
    plan = plan_tiles(n, d, m)
    saved = flash_forward(q, k, v, cfg, plan, MemoryModel(m))
    g = flash_backward(saved, q, k, v, weights, MemoryModel(m))
    fq, fk, fv = finite_difference_grads(q, k, v, cfg, weights, h)
    errors = {
        "dQ": grad_rel_error(g.dq, fq),
        "dK": grad_rel_error(g.dk, fk),
        "dV": grad_rel_error(g.dv, fv),
    }
    return errors, g


# ---------------------------------------------------------------- sweeps

RECORD_FIELDS = (
    "algo", "n", "d", "m", "bc", "br", "sparsity", "hbm_read_elems", "hbm_write_elems",
    "hbm_bytes", "flops", "peak_sram_elems", "wall_ms_median", "max_abs_err_vs_oracle",
)


@dataclass
class RunRecord:
    algo: str
    n: int
    d: int
    m: int
    bc: int
    br: int
    sparsity: float
    hbm_read_elems: int
    hbm_write_elems: int
    hbm_bytes: int
    flops: int
    peak_sram_elems: int
    wall_ms_median: float
    max_abs_err_vs_oracle: float | None

    def csv_row(self):
        row = []
        for value in astuple(self):
            if value is None:
                row.append("")
            elif isinstance(value, float):
                row.append(repr(value))
            else:
                row.append(str(value))
        return row


assert tuple(f.name for f in fields(RunRecord)) == RECORD_FIELDS


@dataclass
class SweepSpec:
    algos: list = field(default_factory=lambda: ["flash_forward"])
    ns: list = field(default_factory=lambda: [1024])
    ds: list = field(default_factory=lambda: [64])
    ms: list = field(default_factory=lambda: [65536])
    bcs: list = field(default_factory=lambda: [None])
    brs: list = field(default_factory=lambda: [None])
    sparsities: list = field(default_factory=lambda: [1.0])
    mask: Mask = field(default_factory=NoMask)
    p_drop: float = 0.0
    seed: int = 0
    tau: float | None = None
    pattern: str = "random"
    pattern_args: dict = field(default_factory=dict)
    repeats: int = 1
    element_bytes: int = 2
    oracle_cap: int = 4096

    def __post_init__(self):
        for name in ("algos", "ns", "ds", "ms", "bcs", "brs", "sparsities"):
            if not getattr(self, name):
                raise ValueError(f"sweep list {name!r} is empty")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for a in self.algos:
            if a not in iomodel.ALGOS:
                raise ValueError(f"unknown algorithm {a!r}")

    def points(self):
        for algo, n, d, m, bc, br in itertools.product(self.algos, self.ns, self.ds, self.ms, self.bcs, self.brs):
            for s in self.sparsities if algo.startswith("blocksparse") else [1.0]:
                yield algo, n, d, m, bc, br, s


def _timed(fn, repeats):
    fn()  # warmup, discarded
    times, result = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return result, statistics.median(times)


def run_point(spec: SweepSpec, algo, n, d, m, bc, br, s) -> RunRecord:
    cfg = AttnConfig(n, d, tau=spec.tau, mask=spec.mask, p_drop=spec.p_drop, seed=spec.seed)
    q, k, v, do = random_inputs(n, d, spec.seed)
    plan = plan_tiles(n, d, m, br=br, bc=bc)
    bmask = None
    if algo.startswith("blocksparse"):
        bmask = make_block_mask(spec.pattern, plan.tr, plan.tc, plan.br, plan.bc, s=s, seed=spec.seed,
                                **spec.pattern_args)
        s = bmask.density
    oracle_ok = n <= spec.oracle_cap
    err = None

    if algo == "standard_forward":
        def run():
            mem = MemoryModel(m, spec.element_bytes)
            return mem, standard_forward(q, k, v, cfg, mem.counter)
        (mem, art), wall = _timed(run, spec.repeats)
        pred = iomodel.predict_standard_forward_io(n, d)
        if oracle_ok and cfg.p_drop == 0:
            err = float(np.abs(memeff_forward(q, k, v, cfg)[0] - art.o).max())
        used = plan
    elif algo == "standard_backward":
        art = standard_forward(q, k, v, cfg)
        def run():
            mem = MemoryModel(m, spec.element_bytes)
            return mem, standard_backward(art, q, k, v, do, cfg, mem.counter)
        (mem, g), wall = _timed(run, spec.repeats)
        pred = iomodel.predict_standard_backward_io(n, d)
        if oracle_ok and cfg.p_drop == 0:
            o, st = memeff_forward(q, k, v, cfg)
            err = g.max_abs_diff(memeff_backward(q, k, v, o, do, st, cfg))
        used = plan
    elif algo.endswith("forward"):
        def run():
            mem = MemoryModel(m, spec.element_bytes)
            if bmask is None:
                return mem, flash_forward(q, k, v, cfg, plan, mem)
            return mem, blocksparse_forward(q, k, v, cfg, plan, bmask, mem)
        (mem, saved), wall = _timed(run, spec.repeats)
        if bmask is None:
            pred = iomodel.predict_flash_forward_io(n, d, plan)
        else:
            pred = iomodel.predict_blocksparse_io(n, d, plan, bmask)
        if oracle_ok:
            ocfg = cfg if bmask is None else with_block_mask(cfg, bmask)
            err = float(np.abs(standard_forward(q, k, v, ocfg).o - saved.o).max())
        used = plan
    else:
        if bmask is None:
            saved = flash_forward(q, k, v, cfg, plan, MemoryModel(m))
        else:
            saved = blocksparse_forward(q, k, v, cfg, plan, bmask, MemoryModel(m))
        def run():
            mem = MemoryModel(m, spec.element_bytes)
            if bmask is None:
                return mem, flash_backward(saved, q, k, v, do, mem)
            return mem, blocksparse_backward(saved, q, k, v, do, bmask, mem)
        (mem, g), wall = _timed(run, spec.repeats)
        if bmask is None:
            pred = iomodel.predict_flash_backward_io(n, d, plan)
        else:
            pred = iomodel.predict_blocksparse_backward_io(n, d, plan, bmask)
        if oracle_ok:
            ocfg = cfg if bmask is None else with_block_mask(cfg, bmask)
            art = standard_forward(q, k, v, ocfg)
            err = g.max_abs_diff(standard_backward(art, q, k, v, do, ocfg))
        used = backward_plan(plan)

    c = mem.counter
    if not pred.matches(c):
        raise AssertionError(
            f"{algo} n={n} d={d} m={m}: counted ({c.hbm_read_elems}, {c.hbm_write_elems}) "
            f"!= predicted ({pred.reads}, {pred.writes})"
        )
    return RunRecord(
        algo, n, d, m, used.bc, used.br, float(s), c.hbm_read_elems, c.hbm_write_elems,
        c.hbm_total_elems * spec.element_bytes, c.flops, c.peak_resident_elems, wall, err,
    )


def run_sweep(spec: SweepSpec):
    return [run_point(spec, *pt) for pt in spec.points()]


def write_records(path, records):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for rec in records:
            w.writerow(rec.csv_row())
