"""Axis-aligned BVH over mesh triangles for ray-cast visibility queries."""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh

_DET_EPS = 1e-14
_BARY_EPS = 1e-12


def _moller_trumbore(origin, direction, v0, e1, e2):
    """Ray/triangle intersection parameters for a batch of triangles.

    Returns (hit_mask, t).  Inclusive barycentric bounds so rays crossing
    shared edges of a closed surface cannot leak through.
    """
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > _DET_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origin - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = (qvec @ direction) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    hit = ok & (u >= -_BARY_EPS) & (v >= -_BARY_EPS) & (u + v <= 1.0 + _BARY_EPS)
    return hit, t


class BVH:
    """Median-split BVH; traversal prunes with a vectorized slab test."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = 8):
        self.mesh = mesh
        v = mesh.vertices
        f = mesh.faces
        self._v0 = v[f[:, 0]]
        self._e1 = v[f[:, 1]] - self._v0
        self._e2 = v[f[:, 2]] - self._v0
        tri_min = np.minimum(np.minimum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
        tri_max = np.maximum(np.maximum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
        centroids = (v[f[:, 0]] + v[f[:, 1]] + v[f[:, 2]]) / 3.0

        bmin, bmax, left, right, start, count = [], [], [], [], [], []

        def build(tri_idx: np.ndarray) -> int:
            node = len(bmin)
            bmin.append(tri_min[tri_idx].min(axis=0))
            bmax.append(tri_max[tri_idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            if len(tri_idx) <= leaf_size:
                start[node] = len(self._order)
                count[node] = len(tri_idx)
                self._order.extend(tri_idx.tolist())
                return node
            c = centroids[tri_idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            order = tri_idx[np.argsort(c[:, axis], kind="stable")]
            half = len(order) // 2
            if np.ptp(c[:, axis]) == 0.0:  # all centroids coincide
                start[node] = len(self._order)
                count[node] = len(tri_idx)
                self._order.extend(tri_idx.tolist())
                return node
            left[node] = build(order[:half])
            right[node] = build(order[half:])
            return node

        self._order: list[int] = []
        build(np.arange(len(f)))
        self.bmin = np.array(bmin)
        self.bmax = np.array(bmax)
        self.left = np.array(left)
        self.right = np.array(right)
        self.start = np.array(start)
        self.count = np.array(count)
        self.order = np.array(self._order, dtype=np.int64)
        del self._order

    def _slab_all(self, origin, direction, t_lo, t_hi):
        """Slab test of one ray against every node's box at once."""
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / direction
            t0 = (self.bmin - origin) * inv
            t1 = (self.bmax - origin) * inv
        tn = np.minimum(t0, t1)
        tf = np.maximum(t0, t1)
        # axis-parallel rays: ignore that axis unless origin is outside the slab
        par = direction == 0.0
        if np.any(par):
            outside = (origin < self.bmin) | (origin > self.bmax)
            tn = np.where(par & ~outside, -np.inf, tn)
            tf = np.where(par & ~outside, np.inf, tf)
            tn = np.where(par & outside, np.inf, tn)
            tf = np.where(par & outside, -np.inf, tf)
        near = np.nanmax(tn, axis=1)
        far = np.nanmin(tf, axis=1)
        return (near <= far) & (far >= t_lo) & (near <= t_hi)

    def _leaf_tris(self, node):
        s = self.start[node]
        return self.order[s:s + self.count[node]]

    def any_hit(self, origin, direction, t_lo: float, t_hi: float) -> bool:
        """True if any triangle intersects the ray with t in (t_lo, t_hi)."""
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        box_ok = self._slab_all(origin, direction, t_lo, t_hi)
        stack = [0]
        while stack:
            node = stack.pop()
            if not box_ok[node]:
                continue
            if self.left[node] < 0:
                tris = self._leaf_tris(node)
                hit, t = _moller_trumbore(origin, direction,
                                          self._v0[tris], self._e1[tris], self._e2[tris])
                if np.any(hit & (t > t_lo) & (t < t_hi)):
                    return True
            else:
                stack.append(self.left[node])
                stack.append(self.right[node])
        return False

    def all_hits(self, origin, direction, t_lo: float = 1e-12):
        """All intersections with t > t_lo, ascending.  Returns (t, points)."""
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        box_ok = self._slab_all(origin, direction, t_lo, np.inf)
        ts: list[np.ndarray] = []
        stack = [0]
        while stack:
            node = stack.pop()
            if not box_ok[node]:
                continue
            if self.left[node] < 0:
                tris = self._leaf_tris(node)
                hit, t = _moller_trumbore(origin, direction,
                                          self._v0[tris], self._e1[tris], self._e2[tris])
                sel = hit & (t > t_lo)
                if np.any(sel):
                    ts.append(t[sel])
            else:
                stack.append(self.left[node])
                stack.append(self.right[node])
        if not ts:
            return np.empty(0), np.empty((0, 3))
        t = np.sort(np.concatenate(ts))
        return t, origin + t[:, None] * direction


def brute_force_hits(mesh: TriangleMesh, origin, direction, t_lo: float = 1e-12):
    """Reference all-hits query testing every triangle (no acceleration)."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    v = mesh.vertices
    f = mesh.faces
    v0 = v[f[:, 0]]
    hit, t = _moller_trumbore(origin, direction, v0, v[f[:, 1]] - v0, v[f[:, 2]] - v0)
    sel = hit & (t > t_lo)
    return np.sort(t[sel])
