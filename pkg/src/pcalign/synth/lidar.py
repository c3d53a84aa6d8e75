"""Spinning LiDAR simulation: 64-beam scan pattern, ray-triangle casting,
and the distance-indexed coordinate noise law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geom import GroundTransform
from .off_mesh import Mesh

_RAY_EPS = 1e-9


def _default_vertical_angles() -> np.ndarray:
    # 64 beams, linear from +2.0 deg down to -24.8 deg
    return np.radians(np.linspace(2.0, -24.8, 64))


@dataclass
class LidarConfig:
    """Scan-pattern model of a 64-beam spinning scanner mounted 1.73 m
    above the ground plane, 0.1728 deg azimuth resolution, 120 m range."""

    sensor_height: float = 1.73
    vertical_angles: np.ndarray = field(default_factory=_default_vertical_angles)
    azimuth_step: float = math.radians(0.1728)
    max_range: float = 120.0

    def __post_init__(self):
        self.vertical_angles = np.asarray(self.vertical_angles, dtype=np.float64)
        if self.vertical_angles.shape != (64,):
            raise ValueError("expected exactly 64 vertical angles")
        if not np.all(np.diff(self.vertical_angles) < 0):
            raise ValueError("vertical angles must be strictly decreasing")
        if self.azimuth_step <= 0:
            raise ValueError("azimuth_step must be positive")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    def azimuths(self) -> np.ndarray:
        """The fixed global azimuth grid, [0, 2pi) in steps of azimuth_step."""
        return np.arange(0.0, 2.0 * math.pi, self.azimuth_step)


def place_mesh(mesh: Mesh, pose: GroundTransform, scale: float, sensor_height: float) -> np.ndarray:
    """World-frame vertices: scaled, yawed, bottom resting on the ground
    plane (z = -sensor_height), translated to (pose.tx, pose.ty)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    v = mesh.vertices * scale
    lift = -v[:, 2].min() - sensor_height
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    out = np.empty_like(v)
    out[:, 0] = c * v[:, 0] - s * v[:, 1] + pose.tx
    out[:, 1] = s * v[:, 0] + c * v[:, 1] + pose.ty
    out[:, 2] = v[:, 2] + lift
    return out


def _select_azimuths(az_grid, center, radius, azimuth_range):
    """Indices of grid azimuths that could hit the bounding sphere,
    optionally intersected with an explicit [lo, hi] azimuth window."""
    keep = np.ones(len(az_grid), dtype=bool)
    rho = math.hypot(center[0], center[1])
    if rho > radius:
        # a ray at azimuth psi stays inside the vertical plane through psi,
        # whose distance to the sphere center is rho*|sin(psi - psi_c)|
        half = math.asin(min(1.0, radius / rho)) + 1e-9
        delta = np.angle(np.exp(1j * (az_grid - math.atan2(center[1], center[0]))))
        keep &= np.abs(delta) <= half
    if azimuth_range is not None:
        lo, hi = azimuth_range
        width = (hi - lo) % (2.0 * math.pi)
        keep &= (az_grid - lo) % (2.0 * math.pi) <= width
    return np.nonzero(keep)[0]


def _select_beams(angles, center, radius):
    dist = float(np.linalg.norm(center))
    if dist <= radius:
        return np.arange(len(angles))
    elev = math.atan2(center[2], math.hypot(center[0], center[1]))
    half = math.asin(radius / dist) + 1e-9
    return np.nonzero(np.abs(angles - elev) <= half)[0]


def cast_scan(
    mesh: Mesh,
    pose: GroundTransform,
    scale: float,
    lidar: LidarConfig,
    azimuth_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Simulate one scan of the placed mesh.

    Returns the nearest ray-triangle intersection per hitting ray, in the
    sensor frame, ordered by (beam, azimuth).  The bounding-sphere azimuth
    and elevation restrictions only discard rays that provably miss;
    azimuth_range additionally restricts the scan to an explicit window.
    """
    verts = place_mesh(mesh, pose, scale, lidar.sensor_height)
    tris = verts[mesh.faces]  # (T, 3, 3)

    center = 0.5 * (verts.min(axis=0) + verts.max(axis=0))
    radius = float(np.linalg.norm(verts - center, axis=1).max())

    az_grid = lidar.azimuths()
    az_idx = _select_azimuths(az_grid, center, radius, azimuth_range)
    beam_idx = _select_beams(lidar.vertical_angles, center, radius)
    if len(az_idx) == 0 or len(beam_idx) == 0:
        return np.empty((0, 3), dtype=np.float64)

    elev = lidar.vertical_angles[beam_idx]
    az = az_grid[az_idx]
    cos_e = np.cos(elev)[:, None]
    dirs = np.empty((len(elev), len(az), 3))
    dirs[:, :, 0] = cos_e * np.cos(az)[None, :]
    dirs[:, :, 1] = cos_e * np.sin(az)[None, :]
    dirs[:, :, 2] = np.sin(elev)[:, None]
    dirs = dirs.reshape(-1, 3)  # beam-major: matches (beam, azimuth) order

    # Moller-Trumbore with the ray origin fixed at 0: the tvec/qvec halves
    # depend only on the triangle and are hoisted out of the ray loop.
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    qvec = np.cross(-v0, e1)  # (T, 3)
    t_num = np.einsum("tj,tj->t", e2, qvec)  # (T,)

    # rays whose line passes the bounding sphere; cheap pre-cull
    proj = dirs @ center
    miss = np.sum(center**2) - proj**2 > radius**2 + 1e-9
    best = np.full(len(dirs), np.inf)

    chunk = 512
    live = np.nonzero(~miss)[0]
    for start in range(0, len(live), chunk):
        rows = live[start : start + chunk]
        d = dirs[rows]  # (R, 3)
        # pvec = d x e2, written out componentwise to keep arrays rank-2
        px = d[:, 1:2] * e2[None, :, 2] - d[:, 2:3] * e2[None, :, 1]
        py = d[:, 2:3] * e2[None, :, 0] - d[:, 0:1] * e2[None, :, 2]
        pz = d[:, 0:1] * e2[None, :, 1] - d[:, 1:2] * e2[None, :, 0]
        det = px * e1[None, :, 0] + py * e1[None, :, 1] + pz * e1[None, :, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det
            u = -(v0[None, :, 0] * px + v0[None, :, 1] * py + v0[None, :, 2] * pz) * inv_det
            v = (d @ qvec.T) * inv_det
            t = t_num[None, :] * inv_det
        ok = (
            (np.abs(det) > 1e-12)
            & (u >= -1e-12)
            & (v >= -1e-12)
            & (u + v <= 1.0 + 1e-12)
            & (t > _RAY_EPS)
        )
        t = np.where(ok, t, np.inf)
        best[rows] = t.min(axis=1)

    hit = best <= lidar.max_range
    return dirs[hit] * best[hit, None]


def noise_sigma(d: float) -> float:
    """Coordinate noise std as a function of scene ground distance."""
    if d < 0:
        raise ValueError("distance must be non-negative")
    return max(0.005, 0.05 * d / 80.0)


def add_noise(cloud: np.ndarray, d: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb every coordinate with clipped zero-mean Gaussian noise."""
    sigma = noise_sigma(d)
    jitter = np.clip(rng.normal(0.0, sigma, size=cloud.shape), -0.05, 0.05)
    return cloud + jitter
