"""Exact tiled attention over a simulated two-level memory hierarchy."""

from .config import AttnConfig, CausalMask, CustomMask, KeyPaddingMask, NoMask, parse_mask
from .errors import AttentionError, CapacityError, NaNError, PlanMismatchError, ShapeError
from .flash import FlashSaved, blocksparse_backward, blocksparse_forward, flash_backward, flash_forward
from .iomodel import (
    IoPrediction,
    byte_report,
    flop_model,
    predict_blocksparse_backward_io,
    predict_blocksparse_io,
    predict_flash_backward_io,
    predict_flash_forward_io,
    predict_standard_backward_io,
    predict_standard_forward_io,
)
from .memory import AccessCounter, MemoryModel
from .numeric import SoftmaxStats, matmul, merge_stats, stable_softmax_row
from .reference import (
    ForwardArtifacts,
    Gradients,
    memeff_backward,
    memeff_forward,
    standard_backward,
    standard_forward,
)
from .rng import DropoutRng, dropout_scale
from .tiling import BlockMask, TilePlan, backward_plan, make_block_mask, plan_tiles

__version__ = "0.1.0"
