"""Random scene sampling: mesh placement, paired scans, ground truth."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geom import GroundTransform, compose, invert, wrap_angle
from .lidar import LidarConfig, add_noise, cast_scan
from .off_mesh import Mesh, load_mesh, normalize_mesh


class GenerationError(RuntimeError):
    pass


@dataclass
class MeshEntry:
    mesh_id: str
    class_label: str
    mesh: Mesh  # normalized: centroid at origin, max extent 1
    yaw_fix: float = 0.0  # intrinsic-orientation correction, radians


@dataclass
class SceneConfig:
    dist_min: float = 2.0
    dist_max: float = 80.0
    scale_min: float = 2.5
    scale_max: float = 4.5
    max_pair_offset: float = 1.0
    max_rel_yaw: float = math.pi / 2.0
    min_points_per_scan: int = 16
    seed: int = 0
    max_retries: int = 100
    noise: bool = True

    def __post_init__(self):
        if not 0 < self.dist_min < self.dist_max:
            raise ValueError("need 0 < dist_min < dist_max")
        if self.scale_min > self.scale_max:
            raise ValueError("need scale_min <= scale_max")
        if self.max_pair_offset < 0:
            raise ValueError("max_pair_offset must be >= 0")
        if self.min_points_per_scan < 1:
            raise ValueError("min_points_per_scan must be >= 1")


@dataclass
class SceneSample:
    """One training pair: two scans of the same object at two poses.

    gt maps cloud1 points onto cloud2's pose; centers are the full-object
    (amodal) mesh origins in the sensor frame.
    """

    cloud1: np.ndarray
    cloud2: np.ndarray
    gt: GroundTransform
    center1: np.ndarray
    center2: np.ndarray
    heading1: float
    heading2: float
    distance_d: float
    class_label: str
    mesh_id: str


def _place_and_scan(entry, heading, xy, scale, lidar, cfg, rng, dist):
    pose = GroundTransform(xy[0], xy[1], heading + entry.yaw_fix)
    cloud = cast_scan(entry.mesh, pose, scale, lidar)
    if cfg.noise and len(cloud):
        cloud = add_noise(cloud, dist, rng)
    # amodal center: the mesh origin (vertex centroid), lifted with the mesh
    lift = -scale * entry.mesh.vertices[:, 2].min() - lidar.sensor_height
    center = np.array([xy[0], xy[1], lift])
    return pose, cloud, center


def sample_scene(
    meshes: list[MeshEntry],
    cfg: SceneConfig,
    lidar: LidarConfig,
    rng: np.random.Generator,
) -> SceneSample:
    """Draw one scene; rejects and redraws when a scan is too sparse.

    Draw order is part of the determinism contract: mesh, distance,
    azimuth, heading, scale, pair offset, relative yaw, then the two
    noise draws.
    """
    if not meshes:
        raise ValueError("mesh pool is empty")
    last_mesh = "<none>"
    for _ in range(cfg.max_retries):
        entry = meshes[int(rng.integers(len(meshes)))]
        last_mesh = entry.mesh_id
        dist = rng.uniform(cfg.dist_min, cfg.dist_max)
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        heading1 = rng.uniform(0.0, 2.0 * math.pi)
        scale = rng.uniform(cfg.scale_min, cfg.scale_max)
        # uniform in the disk of radius max_pair_offset
        radius = cfg.max_pair_offset * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        rel_yaw = rng.uniform(-cfg.max_rel_yaw, cfg.max_rel_yaw)

        xy1 = np.array([dist * math.cos(azimuth), dist * math.sin(azimuth)])
        xy2 = xy1 + [radius * math.cos(phi), radius * math.sin(phi)]
        heading2 = heading1 + rel_yaw
        dist2 = float(np.hypot(xy2[0], xy2[1]))

        pose1, cloud1, center1 = _place_and_scan(entry, heading1, xy1, scale, lidar, cfg, rng, dist)
        pose2, cloud2, center2 = _place_and_scan(entry, heading2, xy2, scale, lidar, cfg, rng, dist2)
        if len(cloud1) < cfg.min_points_per_scan or len(cloud2) < cfg.min_points_per_scan:
            continue

        return SceneSample(
            cloud1=cloud1,
            cloud2=cloud2,
            gt=compose(pose2, invert(pose1)),
            center1=center1,
            center2=center2,
            heading1=wrap_angle(heading1),
            heading2=wrap_angle(heading2),
            distance_d=float(dist),
            class_label=entry.class_label,
            mesh_id=entry.mesh_id,
        )
    raise GenerationError(
        f"gave up after {cfg.max_retries} retries (last mesh {last_mesh!r}): "
        "scans keep falling below min_points_per_scan"
    )


def generate_scenes(
    meshes: list[MeshEntry],
    cfg: SceneConfig,
    lidar: LidarConfig,
    count: int,
    start_index: int = 0,
) -> list[SceneSample]:
    """Scenes indexed start_index..start_index+count-1; scene i draws from
    its own stream seeded by (cfg.seed, i), so generation order (and any
    parallel split) cannot change the output."""
    out = []
    for i in range(start_index, start_index + count):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, i)))
        out.append(sample_scene(meshes, cfg, lidar, rng))
    return out


def load_orientation_fixes(path) -> dict[str, float]:
    """CSV of (mesh_id, yaw_correction_radians) rows; header optional."""
    fixes: dict[str, float] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip().lower() in ("mesh_id", "id"):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: bad orientation-fix row {row!r}")
            fixes[row[0].strip()] = float(row[1])
    return fixes


def load_mesh_pool(root, classes=None, fixes_path=None) -> list[MeshEntry]:
    """Scan a class/train|test/*.off directory tree into normalized entries."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"mesh root {root} is not a directory")
    fixes = load_orientation_fixes(fixes_path) if fixes_path else {}
    entries = []
    for off in sorted(root.glob("*/**/*.off")):
        label = off.relative_to(root).parts[0]
        if classes and label not in classes:
            continue
        mesh_id = off.stem
        entries.append(
            MeshEntry(
                mesh_id=mesh_id,
                class_label=label,
                mesh=normalize_mesh(load_mesh(off)),
                yaw_fix=fixes.get(mesh_id, 0.0),
            )
        )
    if not entries:
        raise FileNotFoundError(f"no .off meshes under {root}")
    return entries
