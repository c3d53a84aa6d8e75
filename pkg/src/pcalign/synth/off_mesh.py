"""OFF triangle mesh loading and normalization.

Handles the plain OFF layout (header keyword, counts line, vertices, faces)
plus the fused-header files found in some mesh corpora where the counts sit
on the same line as the OFF keyword ("OFF8 6 12").  Faces with more than
three vertices are fan-triangulated around their first vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Mesh:
    """Triangle mesh: vertices (n, 3) float64, faces (m, 3) int32."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (n, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must be (m, 3), got {self.faces.shape}")
        if len(self.faces) < 1:
            raise ValueError("mesh has no faces")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh has non-finite vertices")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _tokens(lines, path):
    """Yield (lineno, token list), skipping blanks and comment lines."""
    for lineno, raw in lines:
        text = raw.split("#", 1)[0].strip()
        if text:
            yield lineno, text.split()


def load_mesh(path) -> Mesh:
    """Parse an OFF file into a triangulated Mesh.

    Errors carry the 1-based line number they were detected on.
    """
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        stream = _tokens(enumerate(fh, start=1), path)

        def fail(lineno, msg):
            raise ValueError(f"{path}:{lineno}: {msg}")

        try:
            lineno, tok = next(stream)
        except StopIteration:
            raise ValueError(f"{path}:1: empty file") from None
        if tok[0].upper().startswith("OFF"):
            rest = tok[0][3:]
            tok = ([rest] if rest else []) + tok[1:]
            if not tok:  # counts on their own line
                try:
                    lineno, tok = next(stream)
                except StopIteration:
                    fail(lineno, "missing counts line")
        else:
            fail(lineno, "missing OFF header")
        if len(tok) < 2:
            fail(lineno, "counts line needs vertex and face counts")
        try:
            n_vertices, n_faces = int(tok[0]), int(tok[1])
        except ValueError:
            fail(lineno, f"bad counts line {' '.join(tok)!r}")
        if n_vertices < 1:
            fail(lineno, "mesh has no vertices")

        vertices = np.empty((n_vertices, 3), dtype=np.float64)
        for i in range(n_vertices):
            try:
                lineno, tok = next(stream)
            except StopIteration:
                fail(lineno, f"truncated: expected {n_vertices} vertices, got {i}")
            if len(tok) < 3:
                fail(lineno, f"vertex line has {len(tok)} fields, need 3")
            try:
                vertices[i] = [float(tok[0]), float(tok[1]), float(tok[2])]
            except ValueError:
                fail(lineno, f"bad vertex line {' '.join(tok)!r}")

        triangles: list[tuple[int, int, int]] = []
        for i in range(n_faces):
            try:
                lineno, tok = next(stream)
            except StopIteration:
                fail(lineno, f"truncated: expected {n_faces} faces, got {i}")
            try:
                k = int(tok[0])
                idx = [int(t) for t in tok[1 : 1 + k]]
            except ValueError:
                fail(lineno, f"bad face line {' '.join(tok)!r}")
            if k < 3 or len(idx) < k:
                fail(lineno, f"face needs at least 3 vertices, got {tok[0]}")
            if any(j < 0 or j >= n_vertices for j in idx):
                fail(lineno, "face index out of range")
            for a, b in zip(idx[1:], idx[2:]):  # fan around idx[0]
                triangles.append((idx[0], a, b))

    if not triangles:
        raise ValueError(f"{path}: mesh has no faces")
    return Mesh(vertices, np.array(triangles, dtype=np.int32))


def normalize_mesh(m: Mesh) -> Mesh:
    """Center the vertex centroid at the origin and scale the largest
    axis-aligned extent to exactly 1."""
    centered = m.vertices - m.vertices.mean(axis=0)
    extent = float(np.max(centered.max(axis=0) - centered.min(axis=0)))
    if extent <= 0.0:
        raise ValueError("degenerate mesh: zero extent on all axes")
    return Mesh(centered / extent, m.faces.copy())
