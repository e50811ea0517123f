"""Closed-form HBM traffic and FLOP counts.

These are exact integer contracts: an instrumented run of the matching
algorithm charges precisely these numbers. Asymptotically they reduce to

    standard forward / backward       Theta(n*d + n^2)
    tiled forward / backward          Theta(n*d*Tc) = Theta(n^2 d^2 / M)
    block-sparse forward              Theta(n*d + n^2 d^2 s / M)

No code models the matching lower bound (no exact algorithm beats
n^2 d^2 / M for every M in [d, n*d]); its only executable trace is that a
single key pass (Tc = 1, M >= 4*n*d) already costs Theta(n*d), which is
the cost of reading the inputs once.
"""

from __future__ import annotations

from dataclasses import dataclass

from .memory import AccessCounter
from .tiling import BlockMask, TilePlan, backward_plan


@dataclass(frozen=True)
class IoPrediction:
    reads: int
    writes: int
    formula_id: str

    @property
    def total(self) -> int:
        return self.reads + self.writes

    def matches(self, counter: AccessCounter) -> bool:
        return (self.reads, self.writes) == (counter.hbm_read_elems, counter.hbm_write_elems)


def predict_standard_forward_io(n, d) -> IoPrediction:
    return IoPrediction(3 * n * d + 2 * n * n, 2 * n * n + n * d, "standard_forward")


def predict_standard_backward_io(n, d) -> IoPrediction:
    return IoPrediction(5 * n * n + 5 * n * d, 2 * n * n + 3 * n * d, "standard_backward")


def predict_flash_forward_io(n, d, plan: TilePlan) -> IoPrediction:
    tc = plan.tc
    reads = 2 * n * d + tc * (2 * n * d + 2 * n)
    writes = (tc + 1) * (n * d + 2 * n)
    return IoPrediction(reads, writes, "flash_forward")


def predict_flash_backward_io(n, d, plan: TilePlan) -> IoPrediction:
    """Accepts the forward plan (the backward tiling is derived) or a backward plan."""
    tc = backward_plan(plan).tc
    reads = 2 * n * d + tc * (4 * n * d + 2 * n)
    writes = n * d + tc * n * d + 2 * n * d
    return IoPrediction(reads, writes, "flash_backward")


def _visits(plan: TilePlan, fwd: TilePlan, grid):
    """Sums of (rows*cols, rows, cols) over the tiles of ``plan`` that the grid keeps."""
    area = rows_total = cols_total = 0
    for j in range(plan.tc):
        cs = plan.col_slice(j)
        bc = cs.stop - cs.start
        for i in range(plan.tr):
            rs = plan.row_slice(i)
            if grid is not None and not grid[rs.start // fwd.br, cs.start // fwd.bc]:
                continue
            br = rs.stop - rs.start
            area += br * bc
            rows_total += br
            cols_total += bc
    return area, rows_total, cols_total


def _visited_rows(plan, fwd, density):
    if isinstance(density, BlockMask):
        density.check_plan(fwd)
        return _visits(plan, fwd, density.grid)[1]
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    # exact whenever br divides n and density * tr * tc is an integer
    return round(density * plan.tc * plan.n)


def predict_blocksparse_io(n, d, plan: TilePlan, density) -> IoPrediction:
    """``density`` is a fraction s, or a BlockMask for exact accounting with ragged blocks."""
    rows = _visited_rows(plan, plan, density)
    reads = 2 * n * d + rows * (2 * d + 2)
    writes = n * d + 2 * n + rows * (d + 2)
    return IoPrediction(reads, writes, "blocksparse_forward")


def predict_blocksparse_backward_io(n, d, plan: TilePlan, density) -> IoPrediction:
    bwd = backward_plan(plan)
    rows = _visited_rows(bwd, plan, density)
    reads = 2 * n * d + rows * (4 * d + 2)
    writes = 3 * n * d + rows * d
    return IoPrediction(reads, writes, "blocksparse_backward")


def blocksparse_pass_term(pred: IoPrediction, n, d) -> int:
    """Traffic that scales with the number of visited tiles (reads + writes)."""
    if pred.formula_id == "blocksparse_forward":
        return pred.total - (3 * n * d + 2 * n)
    if pred.formula_id == "blocksparse_backward":
        return pred.total - 5 * n * d
    raise ValueError(f"not a block-sparse prediction: {pred.formula_id}")


ALGOS = (
    "standard_forward",
    "standard_backward",
    "flash_forward",
    "flash_backward",
    "blocksparse_forward",
    "blocksparse_backward",
)


def flop_model(algo, n, d, plan: TilePlan | None = None, p_drop=0.0, bmask: BlockMask | None = None) -> int:
    """FLOPs under the counting rule: a (m,k)x(k,n) product is 2mkn, every
    scalar exp/div/max/add/mul is 1."""
    drop = p_drop > 0
    if algo == "standard_forward":
        return 4 * n * n * d + 6 * n * n + (n * n if drop else 0)
    if algo == "standard_backward":
        return 8 * n * n * d + 4 * n * n + 2 * n * d + (2 * n * n if drop else 0)
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm id {algo!r}")
    if plan is None:
        raise ValueError(f"{algo} needs a tile plan")
    grid = None
    if algo.startswith("blocksparse"):
        if bmask is None:
            raise ValueError(f"{algo} needs a block mask")
        bmask.check_plan(plan)
        grid = bmask.grid
    if algo.endswith("forward"):
        area, rows, _ = _visits(plan, plan, grid)
        return (4 * d + 5 + drop) * area + (4 * d + 9) * rows
    bwd = backward_plan(plan)
    area, rows, cols = _visits(bwd, plan, grid)
    return (10 * d + 6 + 2 * drop) * area + 4 * d * rows + 3 * d * cols


def byte_report(counts, element_bytes=2, multiplier=1):
    """Bytes read and written for an AccessCounter or IoPrediction.

    ``multiplier`` scales a single-head count to batch * heads.
    """
    if isinstance(counts, IoPrediction):
        r, w = counts.reads, counts.writes
    else:
        r, w = counts.hbm_read_elems, counts.hbm_write_elems
    return r * element_bytes * multiplier, w * element_bytes * multiplier
