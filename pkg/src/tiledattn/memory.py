"""Simulated two-level memory: HBM traffic ledger plus SRAM residency tracking.

Counting is element-granular. Loading a block from HBM charges its size
as reads and makes it resident on chip; storing charges writes. On-chip
scratch (score tiles, statistics) is reserved with ``alloc``. Any moment
where resident elements exceed ``slack * m_capacity`` raises ``CapacityError``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import CapacityError

DEFAULT_SLACK = 1.5


@dataclass
class AccessCounter:
    hbm_read_elems: int = 0
    hbm_write_elems: int = 0
    flops: int = 0
    peak_resident_elems: int = 0

    @property
    def hbm_total_elems(self) -> int:
        return self.hbm_read_elems + self.hbm_write_elems

    def __add__(self, other: "AccessCounter") -> "AccessCounter":
        # Independent runs each own their SRAM, so peaks combine by max.
        return AccessCounter(
            self.hbm_read_elems + other.hbm_read_elems,
            self.hbm_write_elems + other.hbm_write_elems,
            self.flops + other.flops,
            max(self.peak_resident_elems, other.peak_resident_elems),
        )

    def snapshot(self) -> dict:
        return asdict(self)

    def copy(self) -> "AccessCounter":
        return AccessCounter(**{f.name: getattr(self, f.name) for f in fields(self)})


class MemoryModel:
    def __init__(self, m_capacity: int, element_bytes: int = 2, slack: float = DEFAULT_SLACK):
        if m_capacity < 1:
            raise ValueError("m_capacity must be >= 1")
        self.m_capacity = int(m_capacity)
        self.element_bytes = element_bytes
        self.slack = slack
        self.counter = AccessCounter()
        self._resident: dict[str, int] = {}
        self._resident_total = 0

    @property
    def limit(self) -> int:
        return int(self.slack * self.m_capacity)

    @property
    def resident(self) -> int:
        return self._resident_total

    def _reserve(self, name: str, size: int):
        if name in self._resident:
            raise RuntimeError(f"buffer {name!r} is already resident")
        total = self._resident_total + size
        if total > self.limit:
            raise CapacityError(
                f"SRAM overflow reserving {name!r} ({size} elems): {total} resident "
                f"> {self.slack} * M = {self.limit}"
            )
        self._resident[name] = size
        self._resident_total = total
        if total > self.counter.peak_resident_elems:
            self.counter.peak_resident_elems = total

    def load(self, name: str, block: np.ndarray) -> np.ndarray:
        """HBM -> SRAM. Returns an on-chip copy."""
        self._reserve(name, block.size)
        self.counter.hbm_read_elems += block.size
        return np.array(block, dtype=np.float64, copy=True)

    def alloc(self, name: str, size: int):
        self._reserve(name, int(size))

    def free(self, *names: str):
        for name in names:
            self._resident_total -= self._resident.pop(name)

    def store(self, dst: np.ndarray, index, value: np.ndarray):
        """SRAM -> HBM write of ``value`` into ``dst[index]``."""
        dst[index] = value
        self.counter.hbm_write_elems += np.size(value)

    def hbm_fill(self, size: int):
        """Initialisation writes performed directly in HBM."""
        self.counter.hbm_write_elems += int(size)

    def flop(self, n: int):
        self.counter.flops += int(n)

    def reset(self):
        if self._resident:
            raise RuntimeError(f"buffers still resident: {sorted(self._resident)}")
        self.counter = AccessCounter()
