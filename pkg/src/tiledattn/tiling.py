"""Block-size planning and block-sparsity masks.

Forward block sizes follow ``Bc = ceil(M / 4d)``, ``Br = min(Bc, d)``,
clamped to ``n``. The backward pass keeps the forward ``Bc`` (so it makes
the same number of passes over Q, O, dO, dQ) and picks the largest divisor
of the forward ``Br`` whose working set fits; ``Bc`` is halved toward a
divisor only when even ``Br = 1`` does not fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, PlanMismatchError
from .memory import DEFAULT_SLACK


def forward_working_set(br, bc, d):
    # K_j, V_j, Q_i, O_i, one score tile (exp and dropout are in place),
    # l_i, m_i and the four running stat vectors.
    return 2 * bc * d + 2 * br * d + br * bc + 6 * br


def backward_working_set(br, bc, d):
    # K_j, V_j and their dK/dV accumulators stay resident; at most two of
    # Q_i, O_i, dO_i, dQ_i, two score-sized tiles and three row vectors.
    return 4 * bc * d + 2 * br * d + 2 * br * bc + 3 * br


def _fits(ws, m_capacity, slack=DEFAULT_SLACK):
    return ws <= int(slack * m_capacity)


@dataclass(frozen=True)
class TilePlan:
    n: int
    d: int
    m_capacity: int
    br: int
    bc: int
    kind: str = "forward"

    @property
    def tr(self) -> int:
        return math.ceil(self.n / self.br)

    @property
    def tc(self) -> int:
        return math.ceil(self.n / self.bc)

    @property
    def working_set(self) -> int:
        ws = forward_working_set if self.kind == "forward" else backward_working_set
        return ws(self.br, self.bc, self.d)

    def row_slice(self, i) -> slice:
        return slice(i * self.br, min((i + 1) * self.br, self.n))

    def col_slice(self, j) -> slice:
        return slice(j * self.bc, min((j + 1) * self.bc, self.n))


def _default_sizes(n, d, m_capacity):
    base = math.ceil(m_capacity / (4 * d))
    return min(min(base, d), n), min(base, n)


def min_feasible_m(n, d, slack=DEFAULT_SLACK, start=None):
    """Smallest M >= ``start`` (default 4d) for which the default forward plan fits.

    Feasibility is not monotone in M: for small d the 6*Br statistics term
    can push mid-range capacities over the limit while smaller ones fit, so
    the scan starts at the capacity the caller asked for.
    """
    m = max(4 * d, start or 0)
    while True:
        br, bc = _default_sizes(n, d, m)
        if _fits(forward_working_set(br, bc, d), m, slack):
            return m
        m += 1


def plan_tiles(n, d, m_capacity, br=None, bc=None, slack=DEFAULT_SLACK) -> TilePlan:
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if m_capacity < 4 * d:
        raise CapacityError(
            f"M={m_capacity} is below 4*d={4 * d}; minimum feasible M for n={n}, d={d} "
            f"is {min_feasible_m(n, d, slack)}",
            min_feasible_m(n, d, slack),
        )
    dbr, dbc = _default_sizes(n, d, m_capacity)
    overridden = br is not None or bc is not None
    br = min(br if br is not None else dbr, n)
    bc = min(bc if bc is not None else dbc, n)
    if br < 1 or bc < 1:
        raise ValueError("block sizes must be >= 1")
    ws = forward_working_set(br, bc, d)
    if not _fits(ws, m_capacity, slack):
        need = math.ceil(ws / slack) if overridden else min_feasible_m(n, d, slack, start=m_capacity)
        raise CapacityError(
            f"forward working set {ws} exceeds {slack}*M with M={m_capacity} "
            f"(br={br}, bc={bc}); minimum feasible M is {need}",
            need,
        )
    return TilePlan(n, d, m_capacity, br, bc)


def _divisors_desc(x):
    return [k for k in range(x, 0, -1) if x % k == 0]


def backward_plan(fwd: TilePlan, slack=DEFAULT_SLACK) -> TilePlan:
    if fwd.kind != "forward":
        return fwd
    for bc in _divisors_desc(fwd.bc):
        for br in _divisors_desc(fwd.br):
            if _fits(backward_working_set(br, bc, fwd.d), fwd.m_capacity, slack):
                return TilePlan(fwd.n, fwd.d, fwd.m_capacity, br, bc, kind="backward")
    need = math.ceil(backward_working_set(1, 1, fwd.d) / slack)
    raise CapacityError(
        f"no backward tiling fits M={fwd.m_capacity} for d={fwd.d}; minimum feasible M is {need}",
        need,
    )


@dataclass
class BlockMask:
    """Boolean grid over (query block, key block); True blocks are computed."""

    grid: np.ndarray
    br: int
    bc: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2 or 0 in self.grid.shape:
            raise ValueError("block mask grid must be a non-empty 2-D array")

    @property
    def tr(self):
        return self.grid.shape[0]

    @property
    def tc(self):
        return self.grid.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.grid.sum())

    @property
    def density(self) -> float:
        return self.nnz / self.grid.size

    def expand(self, n) -> np.ndarray:
        """Element-level keep mask (n x n) implied by the block grid."""
        rows = np.arange(n) // self.br
        cols = np.arange(n) // self.bc
        return self.grid[np.ix_(rows, cols)]

    def check_plan(self, plan: TilePlan):
        if (self.br, self.bc) != (plan.br, plan.bc) or self.grid.shape != (plan.tr, plan.tc):
            raise PlanMismatchError(
                f"block mask uses br={self.br}, bc={self.bc}, grid {self.grid.shape}; "
                f"plan has br={plan.br}, bc={plan.bc}, grid {(plan.tr, plan.tc)}"
            )


def _is_pow2(x):
    return x > 0 and x & (x - 1) == 0


def make_block_mask(kind, tr, tc, br, bc, *, s=None, seed=0, window=1, n_global=1) -> BlockMask:
    """Build a block grid.

    kinds:
      ``random``      exactly ``round(s * tr * tc)`` blocks chosen uniformly
      ``butterfly``   (i, j) kept iff i == j or i ^ j is a power of two
      ``local``       |i - j| <= window, plus the first ``n_global`` block rows and columns
    """
    if tr < 1 or tc < 1:
        raise ValueError("tr and tc must be >= 1")
    if kind == "random":
        if s is None or not 0.0 <= s <= 1.0:
            raise ValueError(f"random block mask needs density s in [0, 1], got {s}")
        k = round(s * tr * tc)
        flat = np.zeros(tr * tc, dtype=bool)
        flat[np.random.default_rng(seed).permutation(tr * tc)[:k]] = True
        grid = flat.reshape(tr, tc)
    elif kind == "butterfly":
        grid = np.array([[i == j or _is_pow2(i ^ j) for j in range(tc)] for i in range(tr)])
    elif kind == "local":
        i = np.arange(tr)[:, None]
        j = np.arange(tc)[None, :]
        grid = (np.abs(i - j) <= window) | (i < n_global) | (j < n_global)
    else:
        raise ValueError(f"unknown block mask kind {kind!r}")
    return BlockMask(grid, br, bc)


def parse_pattern(text: str):
    """CLI ``--pattern``: ``random``, ``butterfly`` or ``local:<w>+<g>``."""
    if text in ("random", "butterfly"):
        return text, {}
    if text.startswith("local:"):
        try:
            w, g = text[len("local:"):].split("+")
            return "local", {"window": int(w), "n_global": int(g)}
        except ValueError:
            raise ValueError(f"bad local pattern {text!r}; expected local:<w>+<g>") from None
    raise ValueError(f"unknown pattern {text!r}")
