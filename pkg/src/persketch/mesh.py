"""Triangle meshes: OBJ loading, normalization, and edge topology."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError

DEGENERATE_AREA = 1e-14


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices (n, 3) float64 and faces (m, 3) int64 with per-face unit normals.

    Degenerate (zero-area) faces are dropped at construction time.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise DegenerateInputError("mesh vertices must be a non-empty (n, 3) array")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) == 0:
            raise DegenerateInputError("mesh faces must be a non-empty (m, 3) array")
        if f.min() < 0 or f.max() >= len(v):
            raise DegenerateInputError("face indices out of range")
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        area2 = np.linalg.norm(cross, axis=1)
        keep = area2 > DEGENERATE_AREA
        f = f[keep]
        cross = cross[keep]
        if len(f) == 0:
            raise DegenerateInputError("all faces were degenerate")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "face_normals", cross / area2[keep][:, None])

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def normalized(self) -> "TriangleMesh":
        """Center the bounding box at the origin and scale into [-1, 1]^3."""
        lo, hi = self.bbox
        center = (lo + hi) / 2.0
        half = float(np.max(hi - lo)) / 2.0
        if half <= 0:
            raise DegenerateInputError("mesh has zero extent")
        return TriangleMesh((self.vertices - center) / half, self.faces)

    def edges(self) -> tuple[np.ndarray, list[list[int]]]:
        """Unique undirected edges (sorted vertex pairs) and adjacent face lists.

        Edges are ordered lexicographically by (min vertex, max vertex) so
        downstream outputs are deterministic.
        """
        f = self.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
        pairs = np.sort(pairs, axis=1)
        face_of = np.tile(np.arange(len(f)), 3)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        face_of = face_of[order]
        uniq, start = np.unique(pairs, axis=0, return_index=True)
        adj: list[list[int]] = []
        bounds = np.append(start, len(pairs))
        for k in range(len(uniq)):
            adj.append(sorted(face_of[bounds[k]:bounds[k + 1]].tolist()))
        return uniq, adj

    def signed_volume(self) -> float:
        v = self.vertices
        f = self.faces
        return float(np.sum(np.einsum(
            "ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]]))) / 6.0)

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces[:, [0, 2, 1]])


def load_obj(path, normalize: bool = True) -> TriangleMesh:
    """Load a Wavefront OBJ; polygon faces are fan-triangulated."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v" and len(parts) >= 4:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f" and len(parts) >= 4:
                idx = []
                for tok in parts[1:]:
                    raw = tok.split("/")[0]
                    i = int(raw)
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not vertices or not faces:
        raise DegenerateInputError(f"no usable geometry in {path}")
    mesh = TriangleMesh(np.array(vertices), np.array(faces))
    return mesh.normalized() if normalize else mesh


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
