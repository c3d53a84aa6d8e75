"""Procedural test meshes: boxes, walls, spheres, and car-like shapes.

These stand in for an external CAD corpus in tests and demo runs; the
scan simulator does not care where triangles come from.
"""

from __future__ import annotations

import numpy as np

from .off_mesh import Mesh, normalize_mesh

# unit box corner layout, reused by every box-based shape
_BOX_CORNERS = np.array(
    [
        [-0.5, -0.5, -0.5],
        [+0.5, -0.5, -0.5],
        [+0.5, +0.5, -0.5],
        [-0.5, +0.5, -0.5],
        [-0.5, -0.5, +0.5],
        [+0.5, -0.5, +0.5],
        [+0.5, +0.5, +0.5],
        [-0.5, +0.5, +0.5],
    ]
)

_BOX_QUADS = [
    (0, 1, 2, 3),  # bottom
    (4, 7, 6, 5),  # top
    (0, 4, 5, 1),
    (1, 5, 6, 2),
    (2, 6, 7, 3),
    (3, 7, 4, 0),
]


def _box_parts(center, size):
    verts = _BOX_CORNERS * np.asarray(size, dtype=np.float64) + np.asarray(center, dtype=np.float64)
    faces = []
    for a, b, c, d in _BOX_QUADS:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return verts, np.array(faces, dtype=np.int32)


def _merge(parts) -> Mesh:
    all_verts = []
    all_faces = []
    offset = 0
    for verts, faces in parts:
        all_verts.append(verts)
        all_faces.append(faces + offset)
        offset += len(verts)
    return Mesh(np.vstack(all_verts), np.vstack(all_faces))


def make_box(dx: float, dy: float, dz: float) -> Mesh:
    return _merge([_box_parts((0.0, 0.0, 0.0), (dx, dy, dz))])


def make_tetrahedron() -> Mesh:
    verts = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]], dtype=np.int32)
    return Mesh(verts, faces)


def make_wall(width: float, height: float) -> Mesh:
    """Flat quad in the local yz plane (x = 0), centered."""
    w, h = width / 2.0, height / 2.0
    verts = np.array([[0.0, -w, -h], [0.0, w, -h], [0.0, w, h], [0.0, -w, h]])
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    return Mesh(verts, faces)


def make_sphere(radius: float = 0.5, subdivisions: int = 2) -> Mesh:
    """Icosphere via midpoint subdivision."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    vert_list = [tuple(v) for v in verts]

    def midpoint(cache, i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = np.array(vert_list[i]) + np.array(vert_list[j])
            m /= np.linalg.norm(m)
            cache[key] = len(vert_list)
            vert_list.append(tuple(m))
        return cache[key]

    for _ in range(subdivisions):
        cache: dict = {}
        next_faces = []
        for a, b, c in faces:
            ab = midpoint(cache, a, b)
            bc = midpoint(cache, b, c)
            ca = midpoint(cache, c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces

    return Mesh(np.array(vert_list) * radius, np.array(faces, dtype=np.int32))


def make_car(
    length: float = 1.0,
    width: float = 0.42,
    body_height: float = 0.30,
    cabin_length: float = 0.45,
    cabin_height: float = 0.17,
    cabin_shift: float = -0.05,
) -> Mesh:
    """Boxy car silhouette: body, cabin, four wheels; +x is forward.

    Proportions are in units of `length`; the result is not normalized.
    """
    clearance = 0.07 * length
    wheel_r = 0.08 * length
    body = _box_parts(
        (0.0, 0.0, clearance + body_height / 2.0), (length, width, body_height)
    )
    cabin = _box_parts(
        (cabin_shift * length, 0.0, clearance + body_height + cabin_height / 2.0),
        (cabin_length * length, width * 0.88, cabin_height),
    )
    wheels = []
    for sx in (-0.31, 0.31):
        for sy in (-0.5, 0.5):
            wheels.append(
                _box_parts(
                    (sx * length, sy * (width - 0.06 * length), wheel_r),
                    (2.2 * wheel_r, 0.06 * length, 2.0 * wheel_r),
                )
            )
    return _merge([body, cabin] + wheels)


def demo_car_pool(count: int, seed: int = 0):
    """Normalized car meshes with jittered proportions.

    Returns (mesh_id, class_label, mesh) triples; import stays local to
    avoid a cycle with scene.py.
    """
    from .scene import MeshEntry

    rng = np.random.default_rng(seed)
    pool = []
    for i in range(count):
        mesh = make_car(
            width=rng.uniform(0.38, 0.46),
            body_height=rng.uniform(0.26, 0.34),
            cabin_length=rng.uniform(0.38, 0.52),
            cabin_height=rng.uniform(0.14, 0.20),
            cabin_shift=rng.uniform(-0.10, 0.02),
        )
        pool.append(MeshEntry(f"car{i:03d}", "car", normalize_mesh(mesh)))
    return pool
