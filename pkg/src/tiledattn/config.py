"""Problem description: sizes, softmax scale, masking and dropout."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


class Mask:
    """Element mask over global (query row, key column) indices.

    ``keep(rows, cols)`` returns a boolean block; False entries become -inf scores.
    """

    kind = "none"

    def keep(self, rows, cols) -> np.ndarray:
        return np.ones((len(rows), len(cols)), dtype=bool)

    def __str__(self):
        return self.kind


class NoMask(Mask):
    pass


class CausalMask(Mask):
    kind = "causal"

    def keep(self, rows, cols):
        return np.asarray(cols)[None, :] <= np.asarray(rows)[:, None]


@dataclass(eq=False)
class KeyPaddingMask(Mask):
    """Keys at index >= valid_len are padding.

    ``valid_len`` is a single length shared by every query row, or an
    array holding one length per query row.
    """

    valid_len: object
    kind = "padding"

    def keep(self, rows, cols):
        vl = np.asarray(self.valid_len)
        rows = np.asarray(rows)
        limit = np.full(rows.shape, vl) if vl.ndim == 0 else vl[rows]
        return np.asarray(cols)[None, :] < limit[:, None]

    def __str__(self):
        vl = np.asarray(self.valid_len)
        return f"padding:{int(vl)}" if vl.ndim == 0 else "padding:<per-row>"


@dataclass(eq=False)
class CustomMask(Mask):
    """Explicit pattern: boolean keep-matrix, or additive matrix of 0 / -inf."""

    pattern: np.ndarray
    kind = "custom"

    def __post_init__(self):
        p = np.asarray(self.pattern)
        if p.ndim != 2:
            raise ShapeError("custom mask pattern must be 2-D")
        if p.dtype != bool:
            p = np.asarray(p, dtype=np.float64)
            if not np.all((p == 0) | np.isneginf(p)):
                raise ValueError("additive mask entries must be 0 or -inf")
            p = p == 0
        self.pattern = p

    def keep(self, rows, cols):
        return self.pattern[np.ix_(np.asarray(rows), np.asarray(cols))]


class AndMask(Mask):
    """Intersection of two masks (an entry survives only if both keep it)."""

    kind = "and"

    def __init__(self, a: Mask, b: Mask):
        self.a, self.b = a, b

    def keep(self, rows, cols):
        return self.a.keep(rows, cols) & self.b.keep(rows, cols)

    def __str__(self):
        return f"{self.a}&{self.b}"


def parse_mask(text: str) -> Mask:
    """Parse the CLI form ``none | causal | padding:<len>``."""
    text = text.strip()
    if text == "none":
        return NoMask()
    if text == "causal":
        return CausalMask()
    if text.startswith("padding:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad padding length in {text!r}") from None
        if n < 0:
            raise ValueError("padding length must be non-negative")
        return KeyPaddingMask(n)
    raise ValueError(f"unknown mask {text!r}; expected none, causal or padding:<len>")


@dataclass
class AttnConfig:
    n: int
    d: int
    tau: float | None = None
    mask: Mask = field(default_factory=NoMask)
    p_drop: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if self.tau is None:
            self.tau = 1.0 / math.sqrt(self.d)
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be a positive finite real, got {self.tau}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"p_drop must lie in [0, 1), got {self.p_drop}")
        if isinstance(self.mask, str):
            self.mask = parse_mask(self.mask)

    def with_mask(self, mask: Mask) -> "AttnConfig":
        return AttnConfig(self.n, self.d, self.tau, mask, self.p_drop, self.seed)
