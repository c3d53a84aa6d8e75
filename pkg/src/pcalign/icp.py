"""Point-to-point ICP constrained to ground-plane motion.

Correspondences are found in 3-D (nearest neighbour within a fixed
radius), but the transform fitted to them only has the three
ground-plane degrees of freedom: the closed-form solve projects all
matched pairs onto the xy plane and recovers (tx, ty, yaw) directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geom import GroundTransform, as_cloud, wrap_angle

# Inflation factor applied to the KD-tree query bound.  cKDTree.query
# treats distance_upper_bound as exclusive; the correspondence contract
# is inclusive (distance <= radius), so we query slightly wide and then
# filter on the exact distances ourselves.
_BOUND_SLACK = 1.0 + 1e-9


@dataclass(frozen=True)
class Correspondence:
    """One matched pair: src point index, dst point index, 3-D distance."""

    src_index: int
    dst_index: int
    distance: float


@dataclass(frozen=True)
class IcpConfig:
    radius: float = 0.1
    max_iterations: int = 30
    eps_translation: float = 1e-6
    eps_yaw: float = 1e-6

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise ValueError(f"radius must be positive and finite, got {self.radius}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.eps_translation <= 0.0 or self.eps_yaw <= 0.0:
            raise ValueError("convergence thresholds must be positive")


@dataclass(frozen=True)
class IcpResult:
    transform: GroundTransform
    iterations: int
    inlier_count: int
    inlier_rmse: float
    converged: bool


def build_index(cloud: np.ndarray) -> cKDTree:
    """KD-tree over a destination cloud, for repeated radius queries."""
    cloud = as_cloud(cloud, min_points=1)
    return cKDTree(cloud)


def _match_arrays(src, index, dst, radius):
    """Nearest dst point within radius for every src point.

    Returns (src_idx, dst_idx, dist) int64/int64/float64 arrays holding
    only the matched rows.  Exact distance ties resolve to the lowest
    dst index; the common no-tie path stays fully vectorised.
    """
    dists, nearest = index.query(src, k=2, distance_upper_bound=radius * _BOUND_SLACK)
    d0 = dists[:, 0]
    valid = d0 <= radius

    ties = valid & np.isfinite(dists[:, 1]) & (dists[:, 1] == d0)
    if np.any(ties):
        nearest = nearest.copy()
        for i in np.nonzero(ties)[0]:
            cand = index.query_ball_point(src[i], radius)
            dd = np.linalg.norm(dst[np.asarray(cand)] - src[i], axis=1)
            best = dd.min()
            nearest[i, 0] = min(c for c, d in zip(cand, dd) if d == best)

    src_idx = np.nonzero(valid)[0]
    return src_idx, nearest[valid, 0].astype(np.int64), d0[valid]


def match(src: np.ndarray, dst: np.ndarray, radius: float = 0.1,
          index: Optional[cKDTree] = None) -> list:
    """Correspondences from src into dst under an inclusive radius gate."""
    src = as_cloud(src, min_points=1)
    dst = as_cloud(dst, min_points=1)
    if not (radius > 0.0 and math.isfinite(radius)):
        raise ValueError(f"radius must be positive and finite, got {radius}")
    if index is None:
        index = cKDTree(dst)
    si, di, dd = _match_arrays(src, index, dst, radius)
    return [Correspondence(int(s), int(d), float(x)) for s, d, x in zip(si, di, dd)]


def _solve_from_points(sp, dp):
    """Closed-form ground-plane fit of matched point arrays (n, 3).

    Projects to xy.  yaw maximises the correlation between centred
    source and destination coordinates; translation then aligns the
    centroids.  A degenerate spread (all source points coincident in
    the plane, or a vanishing correlation) falls back to yaw = 0.
    """
    sx = sp[:, 0]
    sy = sp[:, 1]
    dx = dp[:, 0]
    dy = dp[:, 1]
    scx = sx.mean()
    scy = sy.mean()
    dcx = dx.mean()
    dcy = dy.mean()
    ax = sx - scx
    ay = sy - scy
    bx = dx - dcx
    by = dy - dcy
    s_cos = float(ax @ bx + ay @ by)
    s_sin = float(ax @ by - ay @ bx)
    if math.hypot(s_cos, s_sin) < 1e-15:
        yaw = 0.0
    else:
        yaw = math.atan2(s_sin, s_cos)
    c = math.cos(yaw)
    s = math.sin(yaw)
    tx = dcx - (c * scx - s * scy)
    ty = dcy - (s * scx + c * scy)
    return GroundTransform(tx=tx, ty=ty, yaw=wrap_angle(yaw))


def solve_ground_alignment(correspondences, src: np.ndarray,
                           dst: np.ndarray) -> GroundTransform:
    """Least-squares ground-plane transform for a fixed correspondence set."""
    src = as_cloud(src, min_points=1)
    dst = as_cloud(dst, min_points=1)
    if len(correspondences) == 0:
        raise ValueError("cannot solve alignment from zero correspondences")
    si = np.array([c.src_index for c in correspondences], dtype=np.int64)
    di = np.array([c.dst_index for c in correspondences], dtype=np.int64)
    if si.min() < 0 or si.max() >= len(src) or di.min() < 0 or di.max() >= len(dst):
        raise ValueError("correspondence index out of range")
    return _solve_from_points(src[si], dst[di])


def _rmse(dd):
    return float(np.sqrt(np.mean(dd * dd)))


def icp_p2p(src: np.ndarray, dst: np.ndarray,
            config: Optional[IcpConfig] = None,
            init: Optional[GroundTransform] = None) -> IcpResult:
    """Iterative closest point between two clouds, ground-plane motion only.

    Each iteration matches the currently-transformed source against the
    destination and refits the full transform from the original source
    coordinates.  A candidate step is only accepted if the inlier RMSE
    under re-matching does not increase, which keeps the objective
    monotone; a rejected step terminates at the current estimate.
    """
    src = as_cloud(src, min_points=1)
    dst = as_cloud(dst, min_points=1)
    cfg = config if config is not None else IcpConfig()

    if init is None:
        # Centroid-difference translation, no rotation.
        sc = src[:, :2].mean(axis=0)
        dc = dst[:, :2].mean(axis=0)
        init = GroundTransform(tx=float(dc[0] - sc[0]), ty=float(dc[1] - sc[1]), yaw=0.0)

    index = cKDTree(dst)
    transform = init
    si, di, dd = _match_arrays(transform.apply(src), index, dst, cfg.radius)
    if len(si) == 0:
        return IcpResult(transform=init, iterations=0, inlier_count=0,
                         inlier_rmse=float("inf"), converged=False)
    rmse = _rmse(dd)

    iterations = 0
    converged = False
    for _ in range(cfg.max_iterations):
        candidate = _solve_from_points(src[si], dst[di])
        csi, cdi, cdd = _match_arrays(candidate.apply(src), index, dst, cfg.radius)
        if len(csi) == 0 or _rmse(cdd) > rmse:
            # No acceptable step from here: local minimum.
            converged = True
            break
        dtx = candidate.tx - transform.tx
        dty = candidate.ty - transform.ty
        dyaw = wrap_angle(candidate.yaw - transform.yaw)
        transform = candidate
        si, di, dd = csi, cdi, cdd
        rmse = _rmse(cdd)
        iterations += 1
        if (abs(dtx) < cfg.eps_translation and abs(dty) < cfg.eps_translation
                and abs(dyaw) < cfg.eps_yaw):
            converged = True
            break

    return IcpResult(transform=transform, iterations=iterations,
                     inlier_count=int(len(si)), inlier_rmse=rmse,
                     converged=converged)
