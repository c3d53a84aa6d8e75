"""Synthetic LiDAR scan simulation and dataset generation."""

from .off_mesh import Mesh, load_mesh, normalize_mesh
from .shapes import make_box, make_car, make_sphere, make_tetrahedron, make_wall, demo_car_pool
from .lidar import LidarConfig, add_noise, cast_scan, noise_sigma
from .scene import (
    GenerationError,
    MeshEntry,
    SceneConfig,
    SceneSample,
    generate_scenes,
    load_mesh_pool,
    load_orientation_fixes,
    sample_scene,
)
from .dataset import read_dataset, read_dataset_index, write_dataset

__all__ = [
    "Mesh",
    "load_mesh",
    "normalize_mesh",
    "make_box",
    "make_car",
    "make_sphere",
    "make_tetrahedron",
    "make_wall",
    "demo_car_pool",
    "LidarConfig",
    "add_noise",
    "cast_scan",
    "noise_sigma",
    "GenerationError",
    "MeshEntry",
    "SceneConfig",
    "SceneSample",
    "generate_scenes",
    "load_mesh_pool",
    "load_orientation_fixes",
    "sample_scene",
    "read_dataset",
    "read_dataset_index",
    "write_dataset",
]
