"""Procedural test shapes with outward-facing winding, normalized to [-1, 1]^3."""

from __future__ import annotations

import math

import numpy as np

from .mesh import TriangleMesh


def _outward(mesh: TriangleMesh) -> TriangleMesh:
    return mesh if mesh.signed_volume() > 0 else mesh.flipped()


def cube() -> TriangleMesh:
    """Axis-aligned cube spanning [-1, 1]^3, two triangles per face."""
    v = np.array([[x, y, z] for x in (-1.0, 1.0) for y in (-1.0, 1.0) for z in (-1.0, 1.0)])
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append([a, b, c])
        faces.append([a, c, d])
    return _outward(TriangleMesh(v, np.array(faces)))


def single_triangle() -> TriangleMesh:
    v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return TriangleMesh(v, np.array([[0, 1, 2]]))


def icosphere(subdivisions: int = 2) -> TriangleMesh:
    """Unit sphere from a subdivided icosahedron."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return _outward(TriangleMesh(np.array(verts), np.array(faces)))


def torus(major: float = 0.7, minor: float = 0.3, n_major: int = 32, n_minor: int = 16) -> TriangleMesh:
    """Torus around the y axis (tube circles in planes containing y)."""
    verts = []
    for i in range(n_major):
        u = 2 * math.pi * i / n_major
        for j in range(n_minor):
            v = 2 * math.pi * j / n_minor
            r = major + minor * math.cos(v)
            verts.append([r * math.cos(u), minor * math.sin(v), r * math.sin(u)])
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces.append([a, b, c])
            faces.append([a, c, d])
    return _outward(TriangleMesh(np.array(verts), np.array(faces)))


def lathe(profile, n_segments: int = 24) -> TriangleMesh:
    """Revolve a (radius, y) profile around the y axis.

    Profile points with radius 0 become pole vertices; consecutive points are
    connected by quads (split into triangles) or pole fans.
    """
    rings: list[int | np.ndarray] = []
    verts: list[list[float]] = []
    for r, y in profile:
        if r <= 0.0:
            verts.append([0.0, y, 0.0])
            rings.append(len(verts) - 1)
        else:
            idx = []
            for k in range(n_segments):
                u = 2 * math.pi * k / n_segments
                verts.append([r * math.cos(u), y, r * math.sin(u)])
                idx.append(len(verts) - 1)
            rings.append(np.array(idx))
    faces = []
    for a, b in zip(rings[:-1], rings[1:]):
        if isinstance(a, int) and isinstance(b, int):
            continue
        if isinstance(a, int):
            for k in range(n_segments):
                faces.append([a, b[k], b[(k + 1) % n_segments]])
        elif isinstance(b, int):
            for k in range(n_segments):
                faces.append([a[k], b, a[(k + 1) % n_segments]])
        else:
            for k in range(n_segments):
                k1 = (k + 1) % n_segments
                faces.append([a[k], b[k], b[k1]])
                faces.append([a[k], b[k1], a[k1]])
    return _outward(TriangleMesh(np.array(verts), np.array(faces)))


def bottle(n_segments: int = 24) -> TriangleMesh:
    """A bottle-like solid of revolution (flat base, body, shoulder, neck, cap)."""
    profile = [
        (0.0, -1.0),
        (0.55, -1.0),
        (0.62, -0.85),
        (0.62, 0.15),
        (0.40, 0.45),
        (0.20, 0.60),
        (0.20, 0.92),
        (0.0, 0.92),
    ]
    return lathe(profile, n_segments).normalized()
