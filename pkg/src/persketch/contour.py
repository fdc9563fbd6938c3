"""Contour extraction: silhouettes, sharp features, and boundaries of a mesh.

Edges are classified against a camera, chained into maximal polylines, and
optionally trimmed to their visible portions by ray casting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bvh import BVH
from .errors import DegenerateInputError, EmptyContourError
from .geom import (AnchoredPolyline, CameraRig, clip_coords, perspective_divide,
                   proj_image)
from .mesh import TriangleMesh

KIND_SILHOUETTE = "silhouette"
KIND_SHARP = "sharp"
KIND_BOUNDARY = "boundary"

VISIBILITY_EPS_FACTOR = 1e-4  # ray offset toward the camera, x bbox diagonal


@dataclass(frozen=True)
class ContourSet:
    """Curves with 3D anchors plus a per-curve kind label."""

    curves: list[AnchoredPolyline]
    kinds: list[str]

    def __post_init__(self):
        if len(self.curves) != len(self.kinds):
            raise ValueError("curves and kinds must be parallel lists")

    def __len__(self):
        return len(self.curves)

    def __iter__(self):
        return iter(zip(self.curves, self.kinds))


def classify_edges(mesh: TriangleMesh, rig: CameraRig, sharp_angle: float):
    """Label every mesh edge as silhouette / sharp / boundary / None.

    Silhouette: adjacent face normals have opposite-sign dot products with the
    per-edge view vector (strictly front-facing on exactly one side, so an
    exactly edge-on pair does not count).  Sharp: angle between adjacent face
    normals exceeds ``sharp_angle``.  Boundary: one adjacent face.  An edge
    that is both silhouette and sharp is labeled silhouette.
    """
    edges, adj = mesh.edges()
    midpoints = (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]) / 2.0
    view = rig.view_dirs(midpoints)
    kinds: list[str | None] = [None] * len(edges)
    for e, faces in enumerate(adj):
        if len(faces) == 1:
            kinds[e] = KIND_BOUNDARY
            continue
        if len(faces) != 2:
            continue  # non-manifold edge, skip
        n1 = mesh.face_normals[faces[0]]
        n2 = mesh.face_normals[faces[1]]
        d1 = float(np.dot(n1, view[e]))
        d2 = float(np.dot(n2, view[e]))
        if (d1 < 0.0 <= d2) or (d2 < 0.0 <= d1):
            kinds[e] = KIND_SILHOUETTE
        else:
            normal_angle = math.acos(min(1.0, max(-1.0, float(np.dot(n1, n2)))))
            if normal_angle > sharp_angle:
                kinds[e] = KIND_SHARP
    return edges, kinds


def _chain_edges(edge_list: list[tuple[int, int, int]]):
    """Chain edges (edge_index, v0, v1) into maximal paths.

    A chain continues through a vertex only while exactly two chain edges meet
    there, so junction vertices split chains.  Returns a deterministically
    ordered list of (min contained edge index, vertex path, closed flag).
    """
    incident: dict[int, list[int]] = {}
    for k, (_, a, b) in enumerate(edge_list):
        incident.setdefault(a, []).append(k)
        incident.setdefault(b, []).append(k)
    used = [False] * len(edge_list)

    def other(k, v):
        _, a, b = edge_list[k]
        return b if v == a else a

    chains = []
    for k0 in range(len(edge_list)):
        if used[k0]:
            continue
        used[k0] = True
        _, a0, b0 = edge_list[k0]
        verts = [a0, b0]
        chain_edges = [k0]
        closed = False
        # grow at the tail
        while True:
            v = verts[-1]
            if len(incident[v]) != 2:
                break
            nxt = [e for e in incident[v] if not used[e]]
            if len(nxt) != 1:
                break
            used[nxt[0]] = True
            chain_edges.append(nxt[0])
            verts.append(other(nxt[0], v))
            if verts[-1] == verts[0]:
                closed = True
                verts.pop()  # closed chains do not repeat their start
                break
        if not closed:
            # grow at the head
            while True:
                v = verts[0]
                if len(incident[v]) != 2:
                    break
                nxt = [e for e in incident[v] if not used[e]]
                if len(nxt) != 1:
                    break
                used[nxt[0]] = True
                chain_edges.append(nxt[0])
                verts.insert(0, other(nxt[0], v))
        min_edge = min(edge_list[e][0] for e in chain_edges)
        chains.append((min_edge, verts, closed))

    canon = []
    for min_edge, verts, closed in chains:
        if closed:
            i0 = int(np.argmin(verts))
            verts = verts[i0:] + verts[:i0]
            if len(verts) > 2 and verts[-1] < verts[1]:
                verts = [verts[0]] + verts[1:][::-1]
        elif verts[-1] < verts[0]:
            verts = verts[::-1]
        canon.append((min_edge, verts, closed))
    canon.sort(key=lambda c: c[0])
    return canon


def extract_contours(mesh: TriangleMesh, rig: CameraRig,
                     sharp_angle: float = math.radians(60.0)) -> ContourSet:
    """Silhouette, sharp, and boundary edges chained into maximal polylines.

    Curves carry their mesh-vertex positions as 3D anchors and their analytic
    projections (identity deviation) as 2D samples.
    """
    edges, kinds = classify_edges(mesh, rig, sharp_angle)
    curves: list[AnchoredPolyline] = []
    out_kinds: list[str] = []
    collected = []
    for kind in (KIND_SILHOUETTE, KIND_SHARP, KIND_BOUNDARY):
        edge_list = [(e, int(edges[e, 0]), int(edges[e, 1]))
                     for e in range(len(edges)) if kinds[e] == kind]
        if not edge_list:
            continue
        for min_edge, verts, closed in _chain_edges(edge_list):
            anchors = mesh.vertices[verts]
            pts = proj_image(anchors, rig)
            collected.append((min_edge, kind, AnchoredPolyline(
                pts, anchors, closed=closed, source_id="")))
    if not collected:
        raise EmptyContourError("no contour edges under this camera")
    collected.sort(key=lambda c: c[0])
    for seq, (_, kind, curve) in enumerate(collected):
        curves.append(AnchoredPolyline(curve.points, curve.anchors, curve.closed,
                                       source_id=f"{kind}-{seq}"))
        out_kinds.append(kind)
    return ContourSet(curves, out_kinds)


def _resample_projected(curve: AnchoredPolyline, rig: CameraRig,
                        interval: float) -> AnchoredPolyline:
    """Resample a projected chain uniformly in image-space arc length.

    Anchors are interpolated with the perspective-correct parameter (linear in
    homogeneous coordinates), so projecting a resampled anchor reproduces its
    2D sample exactly; plain 3D lerp would not, because perspective division
    does not commute with linear interpolation.
    """
    anchors = curve.anchors
    if curve.closed:
        anchors = np.vstack([anchors, anchors[:1]])
    h = clip_coords(anchors, rig)
    w = h[:, 3]
    pts = perspective_divide(h, anchors) * rig.viewport.aspect_scale()

    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        raise DegenerateInputError(f"chain {curve.source_id} projects to a point")
    nseg = max(1, math.ceil(total / interval - 1e-9))
    targets = np.minimum(np.arange(nseg) * interval, total)
    if not curve.closed:
        targets = np.append(targets, total)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    span = seg[idx]
    s = np.where(span > 0, (targets - cum[idx]) / np.where(span > 0, span, 1.0), 0.0)
    w0 = w[idx]
    w1 = w[idx + 1]
    t = s * w0 / ((1.0 - s) * w1 + s * w0)
    new_anc = anchors[idx] + t[:, None] * (anchors[idx + 1] - anchors[idx])
    if not curve.closed:
        new_anc[0], new_anc[-1] = anchors[0], anchors[-1]
    # store the exact projection of each interpolated anchor so that
    # re-projecting anchors reproduces the samples bitwise
    new_pts = proj_image(new_anc, rig)
    return AnchoredPolyline(new_pts, new_anc, curve.closed, curve.source_id)


def project_contours(cset: ContourSet, rig: CameraRig, interval: float) -> ContourSet:
    """Project every chain with identity deviation and resample at ``interval``.

    Chains that project to a single point (edges seen exactly end-on) carry no
    curve content and are dropped.
    """
    if len(cset) == 0:
        raise EmptyContourError("empty contour set")
    curves: list[AnchoredPolyline] = []
    kinds: list[str] = []
    for curve, kind in cset:
        try:
            curves.append(_resample_projected(curve, rig, interval))
        except DegenerateInputError:
            continue
        kinds.append(kind)
    if not curves:
        raise EmptyContourError("every chain projects to a point")
    return ContourSet(curves, kinds)


def sample_visibility(curve: AnchoredPolyline, rig: CameraRig, caster: BVH,
                      margin: float) -> np.ndarray:
    """Per-sample visibility by casting a ray from the camera to each anchor."""
    anchors = curve.anchors
    visible = np.ones(len(anchors), dtype=bool)
    if rig.orthographic:
        axis = rig.view_axis()
        span = caster.mesh.bbox_diagonal * 2.0 + 1.0
        for i, a in enumerate(anchors):
            visible[i] = not caster.any_hit(a - axis * span, axis, 1e-12, span - margin)
    else:
        eye = rig.eye()
        for i, a in enumerate(anchors):
            d = a - eye
            dist = float(np.linalg.norm(d))
            visible[i] = not caster.any_hit(eye, d / dist, 1e-12, dist - margin)
    return visible


def visible_run_indices(visible: np.ndarray, closed: bool) -> list[np.ndarray]:
    """Index runs of consecutive visible samples (length >= 2), in curve order.

    For closed curves the indexing wraps, so a run crossing the seam stays one
    run; a fully visible closed curve is a single full run.
    """
    n = len(visible)
    if visible.all():
        return [np.arange(n)]
    idx = np.arange(n)
    if closed:
        # rotate so the split never cuts a visible run at the seam
        h = int(np.argmin(visible))
        idx = np.roll(idx, -h)
    vis = visible[idx]
    runs = []
    start = None
    for k in range(n + 1):
        on = k < n and vis[k]
        if on and start is None:
            start = k
        elif not on and start is not None:
            if k - start >= 2:
                runs.append(idx[start:k])
            start = None
    return runs


def split_visible_runs(curve: AnchoredPolyline, visible: np.ndarray):
    """Split a curve into its visible sub-polylines (runs of >= 2 samples)."""
    if visible.all():
        return [curve]
    return [AnchoredPolyline(curve.points[sel], curve.anchors[sel], closed=False,
                             source_id=curve.source_id)
            for sel in visible_run_indices(visible, curve.closed)]


def visibility_trim(cset: ContourSet, mesh: TriangleMesh, rig: CameraRig,
                    caster: BVH | None = None) -> ContourSet:
    """Remove hidden runs of samples; curves are split at visibility changes."""
    if caster is None:
        caster = BVH(mesh)
    margin = VISIBILITY_EPS_FACTOR * mesh.bbox_diagonal
    curves: list[AnchoredPolyline] = []
    kinds: list[str] = []
    for curve, kind in cset:
        visible = sample_visibility(curve, rig, caster, margin)
        for run in split_visible_runs(curve, visible):
            curves.append(run)
            kinds.append(kind)
    return ContourSet(curves, kinds)
