"""Staged supervision for the siamese aligner.

Three stages are supervised at once from a single forward pass:
  1. each branch's coarse center, against the object center relative to
     the cloud centroid;
  2. each branch's fine center and orientation head, against the
     remaining center offset (after the coarse prediction) and the
     object's orientation in the scan frame;
  3. the final head, against the relative transform expressed between
     the two branches' current canonical frames.

Stage-2 and stage-3 targets depend on the network's own predictions and
are recomputed every pass but held constant for differentiation.
Translation terms use a Huber cost summed over coordinates and averaged
over the batch; angle terms combine bin cross-entropy with a scaled
Huber on the residual of the ground-truth bin only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import Tensor, huber, mean, softmax_cross_entropy, tsum, where
from ..geom import GroundTransform, compose, invert
from .angles import encode_angles
from .model import PairOutput


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.5
    lambda2: float = 1.0
    huber_delta_stage12: float = 1.0
    huber_delta_stage3: float = 2.0
    reg_weight: float = 20.0
    axis_symmetric: bool = False

    def __post_init__(self):
        # lambda1 = 0 is allowed: it isolates the stage-3 terms, a useful
        # diagnostic configuration
        if self.lambda1 < 0.0 or self.lambda2 <= 0.0:
            raise ValueError("stage weights must be positive (lambda1 may be 0)")
        if self.huber_delta_stage12 <= 0.0 or self.huber_delta_stage3 <= 0.0:
            raise ValueError("huber deltas must be positive")
        if self.reg_weight < 0.0:
            raise ValueError("reg_weight must be nonnegative")


@dataclass(frozen=True)
class PairTargets:
    """Ground truth for a batch of pairs, all in the scan frame."""

    center1: np.ndarray      # (B, 2) amodal object centers, cloud 1
    center2: np.ndarray      # (B, 2)
    heading1: np.ndarray     # (B,) object orientation angles, cloud 1
    heading2: np.ndarray     # (B,)
    gt: tuple                # B GroundTransforms, cloud 1 -> cloud 2

    def __post_init__(self):
        nb = len(self.gt)
        for name in ("center1", "center2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (nb, 2):
                raise ValueError(f"{name} must have shape ({nb}, 2), got {arr.shape}")
            object.__setattr__(self, name, arr)
        for name in ("heading1", "heading2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (nb,):
                raise ValueError(f"{name} must have shape ({nb},), got {arr.shape}")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_samples(cls, samples) -> "PairTargets":
        """Build from scene samples (or dataset records with the same fields)."""
        return cls(
            center1=np.array([s.center1[:2] for s in samples], dtype=np.float64),
            center2=np.array([s.center2[:2] for s in samples], dtype=np.float64),
            heading1=np.array([s.heading1 for s in samples], dtype=np.float64),
            heading2=np.array([s.heading2 for s in samples], dtype=np.float64),
            gt=tuple(s.gt for s in samples),
        )


@dataclass(frozen=True)
class StageTargets:
    """Per-stage supervision constants derived from one forward pass.

    Stage-2/3 entries bake in the current predictions (detached); the
    finite-difference oracle evaluates the loss with these held fixed,
    which is exactly what the analytic backward pass differentiates.
    """

    stage1_center1: np.ndarray   # (B, 2) target for branch-1 coarse head
    stage1_center2: np.ndarray
    stage2_center1: np.ndarray   # (B, 2) target for branch-1 fine head
    stage2_center2: np.ndarray
    heading1: np.ndarray         # (B,) stage-2 angle targets
    heading2: np.ndarray
    stage3_translation: np.ndarray  # (B, 2) final-head translation target
    stage3_yaw: np.ndarray          # (B,) final-head angle target


def make_stage_targets(pair: PairOutput, targets: PairTargets) -> StageTargets:
    b1, b2 = pair.branch1, pair.branch2
    nb = len(targets.gt)
    s1_c1 = targets.center1 - b1.centroid
    s1_c2 = targets.center2 - b2.centroid
    s2_c1 = s1_c1 - b1.coarse_center.data.astype(np.float64)
    s2_c2 = s1_c2 - b2.coarse_center.data.astype(np.float64)

    # The align result invert(N2) . T_f . N1 equals the ground truth G
    # exactly when T_f = N2 . G . invert(N1), with the N taken from the
    # current (detached) canonical transforms.
    s3 = [compose(b2.canonical_transforms[i],
                  compose(targets.gt[i], invert(b1.canonical_transforms[i])))
          for i in range(nb)]
    s3_t = np.array([[t.tx, t.ty] for t in s3], dtype=np.float64)
    s3_yaw = np.array([t.yaw for t in s3], dtype=np.float64)
    return StageTargets(stage1_center1=s1_c1, stage1_center2=s1_c2,
                        stage2_center1=s2_c1, stage2_center2=s2_c2,
                        heading1=targets.heading1, heading2=targets.heading2,
                        stage3_translation=s3_t, stage3_yaw=s3_yaw)


def _translation_term(pred: Tensor, target: np.ndarray, delta: float) -> Tensor:
    """Huber summed over the two coordinates, averaged over the batch."""
    return mean(tsum(huber(pred - target.astype(pred.data.dtype), delta), axis=1))


def _angle_samples(logits: Tensor, residuals: Tensor, theta: np.ndarray,
                   cfg: LossConfig) -> Tensor:
    """Per-sample angle loss vector: cross-entropy plus weighted residual
    Huber at the ground-truth bin; under axis symmetry, the per-sample
    minimum over the two opposite orientations (ties keep the first)."""
    bins = logits.shape[1]
    rows = np.arange(logits.shape[0])

    def one(target_angle):
        idx, res = encode_angles(target_angle, bins)
        ce = softmax_cross_entropy(logits, idx)
        reg = huber(residuals[rows, idx] - res.astype(residuals.data.dtype), 1.0)
        return ce + cfg.reg_weight * reg

    loss = one(theta)
    if cfg.axis_symmetric:
        flipped = one(theta + math.pi)
        loss = where(loss.data <= flipped.data, loss, flipped)
    return loss


def staged_loss(pair: PairOutput, targets: PairTargets, cfg: LossConfig,
                stage_targets: Optional[StageTargets] = None):
    """Total training loss and a per-term breakdown of plain floats.

    stage_targets defaults to make_stage_targets(pair, targets); pass a
    precomputed set to hold the prediction-dependent targets fixed.
    """
    st = stage_targets if stage_targets is not None else make_stage_targets(pair, targets)
    b1, b2 = pair.branch1, pair.branch2
    d12 = cfg.huber_delta_stage12

    t_s1 = 0.5 * (_translation_term(b1.coarse_center, st.stage1_center1, d12)
                  + _translation_term(b2.coarse_center, st.stage1_center2, d12))
    t_s2 = 0.5 * (_translation_term(b1.fine_center, st.stage2_center1, d12)
                  + _translation_term(b2.fine_center, st.stage2_center2, d12))
    t_s3 = _translation_term(pair.translation, st.stage3_translation,
                             cfg.huber_delta_stage3)

    a_s2 = 0.5 * (mean(_angle_samples(b1.angle_logits, b1.angle_residuals,
                                      st.heading1, cfg))
                  + mean(_angle_samples(b2.angle_logits, b2.angle_residuals,
                                        st.heading2, cfg)))
    a_s3 = mean(_angle_samples(pair.angle_logits, pair.angle_residuals,
                               st.stage3_yaw, cfg))

    transl = cfg.lambda1 * (t_s1 + t_s2) + t_s3
    angle = cfg.lambda1 * a_s2 + a_s3
    total = transl + cfg.lambda2 * angle

    breakdown = {
        "transl_stage1": t_s1.item(),
        "transl_stage2": t_s2.item(),
        "transl_stage3": t_s3.item(),
        "angle_stage2": a_s2.item(),
        "angle_stage3": a_s3.item(),
        "transl_overall": transl.item(),
        "angle_overall": angle.item(),
        "total": total.item(),
    }
    return total, breakdown
