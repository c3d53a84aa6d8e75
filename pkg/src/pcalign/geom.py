"""Rigid motions constrained to the ground plane.

All transforms here are an xy-translation plus a rotation about the z-axis
(the vertical). A transform acts on column points by rotate-then-translate:

    p' = R(yaw) @ p + (tx, ty, 0)

Every module in this package shares that convention. Point clouds are plain
``(n, 3)`` float arrays, ordered, with z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped > math.pi:
        wrapped -= TWO_PI
    elif wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def as_cloud(points, *, min_points: int = 0) -> np.ndarray:
    """Validate and return points as a float64 (n, 3) array.

    Raises ValueError for wrong shape, non-finite coordinates, or fewer
    than ``min_points`` points.
    """
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {cloud.shape}")
    if cloud.shape[0] < min_points:
        raise ValueError(f"need at least {min_points} points, got {cloud.shape[0]}")
    if not np.isfinite(cloud).all():
        raise ValueError("point cloud contains non-finite coordinates")
    return cloud


@dataclass(frozen=True)
class GroundTransform:
    """xy-translation plus z-rotation; yaw is stored wrapped to (-pi, pi]."""

    tx: float = 0.0
    ty: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.tx) and math.isfinite(self.ty) and math.isfinite(self.yaw)):
            raise ValueError(f"non-finite transform parameters: {(self.tx, self.ty, self.yaw)}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @classmethod
    def identity(cls) -> "GroundTransform":
        return cls(0.0, 0.0, 0.0)

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix acting on (x, y, 1) columns."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]])

    def apply(self, cloud) -> np.ndarray:
        """Rotate a nonempty cloud about z by yaw, then translate by (tx, ty, 0)."""
        pts = as_cloud(cloud, min_points=1)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.tx
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.ty
        out[:, 2] = pts[:, 2]
        return out

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return (c * x - s * y + self.tx, s * x + c * y + self.ty)

    def compose(self, other: "GroundTransform") -> "GroundTransform":
        """Return c with c.apply(x) == self.apply(other.apply(x))."""
        tx, ty = self.apply_point(other.tx, other.ty)
        return GroundTransform(tx, ty, self.yaw + other.yaw)

    def inverse(self) -> "GroundTransform":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return GroundTransform(-(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty), -self.yaw)

    def translation_norm(self) -> float:
        return math.hypot(self.tx, self.ty)

    def params(self) -> tuple[float, float, float]:
        return (self.tx, self.ty, self.yaw)


def compose(a: GroundTransform, b: GroundTransform) -> GroundTransform:
    return a.compose(b)


def invert(t: GroundTransform) -> GroundTransform:
    return t.inverse()


def apply(t: GroundTransform, cloud) -> np.ndarray:
    return t.apply(cloud)


def angle_deviation(pred_yaw: float, gt_yaw: float, axis_symmetric: bool = False) -> float:
    """Absolute angular deviation between two headings.

    With ``axis_symmetric`` the two headings are treated as undirected axes
    (theta and theta + pi equivalent), so the result lies in [0, pi/2];
    otherwise it is the wrapped absolute difference in [0, pi].
    """
    diff = pred_yaw - gt_yaw
    if axis_symmetric:
        folded = math.fmod(abs(diff), math.pi)
        return min(folded, math.pi - folded)
    return abs(wrap_angle(diff))


def flip_heading_if_needed(pred: GroundTransform) -> GroundTransform:
    """Flip a predicted heading by pi when it deviates by more than pi/2.

    Under high frame rates the true relative rotation stays below 90 deg,
    so an axis-only orientation estimate can be disambiguated by folding any
    larger yaw back toward zero. Translation is unchanged.
    """
    if abs(pred.yaw) > math.pi / 2.0:
        return GroundTransform(pred.tx, pred.ty, pred.yaw - math.copysign(math.pi, pred.yaw))
    return pred
