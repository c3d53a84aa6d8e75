"""Learned pairwise alignment: canonicalization branches, pose head, loss."""

from .angles import (
    BIN_WIDTH,
    NUM_BINS,
    AngleTarget,
    decode_angle,
    encode_angle,
    encode_angles,
)
from .loss import (
    LossConfig,
    PairTargets,
    StageTargets,
    make_stage_targets,
    staged_loss,
)
from .model import (
    AlignNetParams,
    BranchOutput,
    ModelConfig,
    PairOutput,
    align,
    canonical_forward,
    forward_pair,
)

__all__ = [
    "BIN_WIDTH",
    "NUM_BINS",
    "AngleTarget",
    "AlignNetParams",
    "BranchOutput",
    "LossConfig",
    "ModelConfig",
    "PairOutput",
    "PairTargets",
    "StageTargets",
    "align",
    "canonical_forward",
    "decode_angle",
    "encode_angle",
    "encode_angles",
    "forward_pair",
    "make_stage_targets",
    "staged_loss",
]
