"""Rendering through the learned field and deviated-space topology cleanup.

Applying a deviation can flip inter-contour occlusions and move T-junctions.
The regularization pass here recomputes per-sample visibility with deviated
depths (z of D C [p;1] before the divide), trims hidden runs, and snaps
cut endpoints onto the occluding curve.
"""

from __future__ import annotations

import numpy as np

from .bvh import BVH
from .contour import (ContourSet, extract_contours, project_contours,
                      sample_visibility, visibility_trim, visible_run_indices,
                      VISIBILITY_EPS_FACTOR)
from .deviation import DeviationField
from .geom import AnchoredPolyline, CameraRig, clip_coords
from .mesh import TriangleMesh


def render_analytic(mesh: TriangleMesh, rig: CameraRig, cfg) -> ContourSet:
    """Visible contour curves, resampled, with analytic projection."""
    cset = extract_contours(mesh, rig, cfg.sharp_angle())
    cset = project_contours(cset, rig, cfg.interval_for(rig.viewport))
    if not cfg.include_hidden:
        cset = visibility_trim(cset, mesh, rig)
    return cset


def deviated_depths(field: DeviationField, rig: CameraRig, points: np.ndarray) -> np.ndarray:
    """Clip-space z of D(x) C [x;1] (no perspective divide)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    D = field.eval(points)
    if D.ndim == 2:
        D = D[None]
    h0 = clip_coords(points, rig)
    return np.einsum("nk,nk->n", D[:, 2, :], h0)


def regularized_keep_masks(cset: ContourSet, mesh: TriangleMesh, rig: CameraRig,
                           field: DeviationField, caster: BVH | None = None
                           ) -> list[np.ndarray]:
    """Per-curve boolean masks of samples visible under deviated depth order.

    Each sample's analytic ray is intersected with the mesh; the sample is
    hidden if any hit (other than the sample's own surface point) lands at a
    smaller deviated depth.  With an identity field this reduces exactly to
    analytic visibility.
    """
    if caster is None:
        caster = BVH(mesh)
    margin = VISIBILITY_EPS_FACTOR * mesh.bbox_diagonal

    sample_pts = []
    hit_pts = []
    hit_owner = []
    owner = 0
    ortho = rig.orthographic
    axis = rig.view_axis() if ortho else None
    span = mesh.bbox_diagonal * 2.0 + 1.0
    eye = None if ortho else rig.eye()
    for curve, _ in cset:
        for a in curve.anchors:
            if ortho:
                origin = a - axis * span
                direction = axis
                t_anchor = span
            else:
                d = a - eye
                t_anchor = float(np.linalg.norm(d))
                origin = eye
                direction = d / t_anchor
            ts, pts = caster.all_hits(origin, direction)
            keep = np.abs(ts - t_anchor) > margin
            sample_pts.append(a)
            hit_pts.append(pts[keep])
            hit_owner.append(np.full(int(keep.sum()), owner))
            owner += 1

    sample_pts = np.array(sample_pts)
    z_samples = deviated_depths(field, rig, sample_pts)
    if hit_pts and sum(len(h) for h in hit_pts):
        all_hits = np.vstack([h for h in hit_pts if len(h)])
        owners = np.concatenate([o for o in hit_owner if len(o)])
        z_hits = deviated_depths(field, rig, all_hits)
        z_eps = 1e-9 * np.maximum(1.0, np.abs(z_samples[owners]))
        occludes = z_hits < z_samples[owners] - z_eps
        hidden = np.zeros(len(sample_pts), dtype=bool)
        np.logical_or.at(hidden, owners[occludes], True)
    else:
        hidden = np.zeros(len(sample_pts), dtype=bool)

    masks = []
    k = 0
    for curve, _ in cset:
        masks.append(~hidden[k:k + len(curve)])
        k += len(curve)
    return masks


def _nearest_on_curve(pt: np.ndarray, curve: AnchoredPolyline):
    pts = curve.points
    a = pts[:-1]
    b = pts[1:]
    if curve.closed:
        a = np.vstack([a, pts[-1:]])
        b = np.vstack([b, pts[:1]])
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", pt - a, ab) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.linalg.norm(proj - pt, axis=1)
    i = int(np.argmin(d))
    return float(d[i]), proj[i]


def _snap_t_junctions(curves: list[AnchoredPolyline], cut_flags: list[tuple[bool, bool]],
                      radius: float) -> list[AnchoredPolyline]:
    out = []
    for k, curve in enumerate(curves):
        pts = curve.points.copy()
        for end, flagged in zip((0, -1), cut_flags[k]):
            if not flagged:
                continue
            best_d, best_p = np.inf, None
            for k2, other in enumerate(curves):
                if k2 == k:
                    continue
                d, p = _nearest_on_curve(pts[end], other)
                if d < best_d:
                    best_d, best_p = d, p
            if best_p is not None and best_d <= radius:
                pts[end] = best_p
        out.append(AnchoredPolyline(pts, curve.anchors, curve.closed, curve.source_id))
    return out


def regularize_topology(cset: ContourSet, mesh: TriangleMesh, rig: CameraRig,
                        field: DeviationField, interval: float,
                        snap: bool = True) -> ContourSet:
    """Trim deviated curves to their deviated-space-visible runs and snap
    cut endpoints onto the occluding curve (within 2 x sampling interval)."""
    masks = regularized_keep_masks(cset, mesh, rig, field)
    curves: list[AnchoredPolyline] = []
    kinds: list[str] = []
    cut_flags: list[tuple[bool, bool]] = []
    for k, (curve, kind) in enumerate(cset):
        visible = masks[k]
        n = len(curve)
        for sel in visible_run_indices(visible, curve.closed):
            if len(sel) < 2:
                continue
            full = len(sel) == n
            closed = curve.closed and full
            curves.append(AnchoredPolyline(curve.points[sel], curve.anchors[sel],
                                           closed=closed, source_id=curve.source_id))
            kinds.append(kind)
            if closed:
                cut_flags.append((False, False))
            elif curve.closed:
                cut_flags.append((True, True))
            else:
                cut_flags.append((sel[0] != 0, sel[-1] != n - 1))
    if snap and curves:
        curves = _snap_t_junctions(curves, cut_flags, 2.0 * interval)
    return ContourSet(curves, kinds)


def render_deviated(field: DeviationField, mesh: TriangleMesh, rig: CameraRig,
                    cfg, regularize: bool = True) -> ContourSet:
    """Contours of the mesh projected through the learned deviation.

    Curves are extracted and resampled analytically, re-projected through the
    field, then regularized (deviated-space visibility + T-junction snapping)
    unless hidden contours were requested.
    """
    cset = extract_contours(mesh, rig, cfg.sharp_angle())
    cset = project_contours(cset, rig, cfg.interval_for(rig.viewport))
    deviated = ContourSet(
        [AnchoredPolyline(field.apply(rig, c.anchors), c.anchors, c.closed, c.source_id)
         for c in cset.curves],
        list(cset.kinds))
    if cfg.include_hidden or not regularize:
        return deviated
    return regularize_topology(deviated, mesh, rig, field,
                               cfg.interval_for(rig.viewport),
                               snap=cfg.snap_t_junctions)
