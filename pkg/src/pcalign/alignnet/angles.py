"""Bin-plus-residual angle coding.

An angle is classified into one of `bins` equally spaced centers
i * (2*pi/bins) and refined by a residual normalized to [-1, 1], one
unit being half a bin width.  Angles landing exactly halfway between
two centers belong to the lower bin (residual +1), so encoding is a
total deterministic function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geom import wrap_angle

NUM_BINS = 50
BIN_WIDTH = 2.0 * math.pi / NUM_BINS


@dataclass(frozen=True)
class AngleTarget:
    bin: int
    residual: float  # normalized: 1.0 means half a bin width

    def __post_init__(self):
        if not -1.0 <= self.residual <= 1.0:
            raise ValueError(f"residual out of [-1, 1]: {self.residual}")


def encode_angles(theta, bins: int = NUM_BINS):
    """Vectorised encoder: arrays of bin indices and normalized residuals."""
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    width = 2.0 * math.pi / bins
    q = np.mod(np.asarray(theta, dtype=np.float64), 2.0 * math.pi) / width
    shifted = q + 0.5
    idx = np.floor(shifted)
    # exactly halfway between two centers: take the lower bin
    idx = idx - (shifted == idx)
    # rounding in the mod/divide above can overshoot the halfway point by
    # an ulp, which would leave the boundary residual at 1 + O(1e-15)
    residual = np.clip((q - idx) * 2.0, -1.0, 1.0)
    return idx.astype(np.int64) % bins, residual


def encode_angle(theta: float, bins: int = NUM_BINS) -> AngleTarget:
    idx, residual = encode_angles(np.float64(theta), bins)
    return AngleTarget(int(idx), float(residual))


def decode_angle(logits, residuals) -> float:
    """argmax bin (ties to the lowest index) plus its scaled residual,
    wrapped to (-pi, pi]."""
    logits = np.asarray(logits, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    if logits.ndim != 1 or logits.shape != residuals.shape or len(logits) < 2:
        raise ValueError(
            f"need matching 1-D logits/residuals, got {logits.shape} vs {residuals.shape}")
    bins = len(logits)
    width = 2.0 * math.pi / bins
    i = int(np.argmax(logits))
    # (i / bins) * 2pi rounds once, so the center of bin 25 of 50 is the
    # float closest to pi rather than an ulp above it
    return wrap_angle((i / bins) * (2.0 * math.pi) + residuals[i] * (width / 2.0))
