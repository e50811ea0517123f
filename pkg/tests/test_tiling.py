import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiledattn.errors import CapacityError, PlanMismatchError
from tiledattn.tiling import (
    BlockMask,
    backward_plan,
    backward_working_set,
    forward_working_set,
    make_block_mask,
    min_feasible_m,
    parse_pattern,
    plan_tiles,
)


def test_default_plan_large():
    p = plan_tiles(1024, 64, 65536)
    assert (p.bc, p.br, p.tc, p.tr) == (256, 64, 4, 16)
    assert p.working_set <= 1.5 * 65536


def test_default_plan_small_m():
    p = plan_tiles(1024, 64, 1024)
    assert (p.bc, p.br) == (4, 4)


def test_override_recomputes_working_set():
    p = plan_tiles(1024, 64, 65536, br=8, bc=8)
    assert (p.br, p.bc) == (8, 8)
    assert p.working_set == forward_working_set(8, 8, 64)


def test_clamped_to_n():
    p = plan_tiles(10, 4, 10_000)
    assert (p.br, p.bc, p.tr, p.tc) == (4, 10, 3, 1)


def test_infeasible_window_points_upward():
    # d=4: M=64 overflows through the stats term although M=16 fits
    with pytest.raises(CapacityError) as exc:
        plan_tiles(16, 4, 64)
    m = exc.value.min_feasible_m
    assert m > 64
    plan_tiles(16, 4, m)
    for bad in range(64, m):
        with pytest.raises(CapacityError):
            plan_tiles(16, 4, bad)
    plan_tiles(16, 4, 16)


def test_too_small_capacity_names_minimum():
    with pytest.raises(CapacityError, match="minimum feasible M") as exc:
        plan_tiles(64, 16, 32)
    m = exc.value.min_feasible_m
    assert m == min_feasible_m(64, 16)
    plan_tiles(64, 16, m)
    with pytest.raises(CapacityError):
        plan_tiles(64, 16, m - 1)


def test_oversized_override_rejected():
    with pytest.raises(CapacityError) as exc:
        plan_tiles(256, 16, 1024, br=128, bc=128)
    assert exc.value.min_feasible_m > 1024


@settings(max_examples=60)
@given(st.integers(1, 300), st.sampled_from([1, 2, 4, 16, 64]), st.integers(1, 40))
def test_plans_respect_capacity(n, d, mult):
    m = min_feasible_m(n, d, start=4 * d * mult)
    p = plan_tiles(n, d, m)
    assert p.working_set <= 1.5 * m
    assert 1 <= p.br <= n and 1 <= p.bc <= n
    try:
        b = backward_plan(p)
    except CapacityError as exc:
        assert exc.min_feasible_m > m
        return
    assert b.working_set == backward_working_set(b.br, b.bc, d) <= 1.5 * m
    assert p.br % b.br == 0 and p.bc % b.bc == 0


def test_backward_plan_keeps_passes_at_large_m():
    b = backward_plan(plan_tiles(1024, 64, 65536))
    assert b.bc == 256 and b.tc == 4 and b.kind == "backward"


class TestBlockMasks:
    def test_random_full(self):
        bm = make_block_mask("random", 5, 7, 2, 2, s=1.0)
        assert bm.grid.all() and bm.density == 1.0

    def test_random_density(self):
        bm = make_block_mask("random", 16, 16, 4, 4, s=0.25, seed=3)
        assert abs(bm.nnz - 0.25 * 256) <= 1

    def test_butterfly_8x8(self):
        bm = make_block_mask("butterfly", 8, 8, 1, 1)
        diag = int(np.trace(bm.grid))
        assert diag == 8 and bm.nnz - diag == 24
        for i in range(8):
            for j in range(8):
                assert bm.grid[i, j] == (i == j or (i ^ j) in (1, 2, 4))

    def test_local(self):
        bm = make_block_mask("local", 6, 6, 1, 1, window=1, n_global=1)
        assert bm.grid[0].all() and bm.grid[:, 0].all()
        assert bm.grid[3, 2] and not bm.grid[3, 5]

    @pytest.mark.parametrize("s", [-0.1, 1.5, None])
    def test_bad_density(self, s):
        with pytest.raises(ValueError):
            make_block_mask("random", 2, 2, 1, 1, s=s)

    def test_expand(self):
        bm = BlockMask(np.array([[True, False], [False, True], [False, True]]), 2, 3)
        e = bm.expand(5)
        assert e.shape == (5, 5)
        assert e[1, 2] and not e[1, 3] and e[4, 4] and not e[2, 0]

    def test_plan_mismatch(self):
        plan = plan_tiles(16, 4, 256)
        with pytest.raises(PlanMismatchError):
            BlockMask(np.ones((plan.tr, plan.tc)), plan.br + 1, plan.bc).check_plan(plan)

    def test_parse_pattern(self):
        assert parse_pattern("local:2+1") == ("local", {"window": 2, "n_global": 1})
        assert parse_pattern("butterfly") == ("butterfly", {})
        with pytest.raises(ValueError):
            parse_pattern("local:x")
