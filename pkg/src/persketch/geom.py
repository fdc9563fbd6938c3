"""Core 2D/3D geometry: polylines, cameras, projection, and Chamfer evaluation.

2D positions live in *normalized image space*: the viewport's longer side is
mapped to [-1, 1], the shorter side to a proportionally smaller range, y up.
All kernel widths and loss distances are expressed in this space so they are
resolution independent.

Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateInputError,
    OutOfDomainError,
    ProjectionSingularityError,
    ZeroTangentError,
)

W_EPSILON = 1e-12  # |w| below this is a projection singularity


# ---------------------------------------------------------------------------
# polylines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnchoredPolyline:
    """A sampled 2D curve whose samples may carry originating 3D points.

    ``points`` is (n, 2) in normalized image space.  ``anchors`` is (n, 3) in
    normalized object space for contour curves, or None for pure-2D sketch
    strokes.  Closed curves do not repeat their first sample.
    """

    points: np.ndarray
    anchors: np.ndarray | None = None
    closed: bool = False
    source_id: str = ""

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DegenerateInputError(f"points must be (n, 2), got {pts.shape}")
        if len(pts) < 2:
            raise DegenerateInputError("a polyline needs at least 2 samples")
        object.__setattr__(self, "points", pts)
        if self.anchors is not None:
            anc = np.ascontiguousarray(np.asarray(self.anchors, dtype=np.float64))
            if anc.shape != (len(pts), 3):
                raise DegenerateInputError(
                    f"anchors must be ({len(pts)}, 3), got {anc.shape}")
            object.__setattr__(self, "anchors", anc)

    def __len__(self):
        return len(self.points)

    @property
    def has_anchors(self) -> bool:
        return self.anchors is not None

    def segment_vectors(self) -> np.ndarray:
        """Edge vectors, including the wrap-around edge for closed curves."""
        if self.closed:
            return np.roll(self.points, -1, axis=0) - self.points
        return np.diff(self.points, axis=0)

    def arc_length(self) -> float:
        return float(np.sum(np.linalg.norm(self.segment_vectors(), axis=1)))

    def reversed(self) -> "AnchoredPolyline":
        anc = None if self.anchors is None else self.anchors[::-1].copy()
        return AnchoredPolyline(self.points[::-1].copy(), anc, self.closed, self.source_id)


def resample(poly: AnchoredPolyline, interval: float) -> AnchoredPolyline:
    """Resample to arc-length-uniform spacing ``interval``.

    Samples sit at arc lengths 0, interval, 2*interval, ...; the final segment
    may be shorter.  Endpoints of open curves are preserved exactly; 3D anchors
    are interpolated linearly along their source segments.
    """
    if interval <= 0:
        raise ValueError(f"interval must be positive, got {interval}")
    pts = poly.points
    anc = poly.anchors
    if poly.closed:
        pts = np.vstack([pts, pts[:1]])
        if anc is not None:
            anc = np.vstack([anc, anc[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        raise DegenerateInputError("zero-length polyline")

    # 1e-9 slack avoids a spurious micro-segment when total is a near-exact
    # multiple of the interval
    nseg = max(1, math.ceil(total / interval - 1e-9))
    targets = np.minimum(np.arange(nseg) * interval, total)
    if not poly.closed:
        targets = np.append(targets, total)

    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    d0 = cum[idx]
    span = seg[idx]
    alpha = np.where(span > 0, (targets - d0) / np.where(span > 0, span, 1.0), 0.0)
    new_pts = pts[idx] + alpha[:, None] * (pts[idx + 1] - pts[idx])
    if not poly.closed:
        new_pts[-1] = pts[-1]  # exact endpoint
        new_pts[0] = pts[0]
    new_anc = None
    if anc is not None:
        new_anc = anc[idx] + alpha[:, None] * (anc[idx + 1] - anc[idx])
        if not poly.closed:
            new_anc[-1] = anc[-1]
            new_anc[0] = anc[0]
    return AnchoredPolyline(new_pts, new_anc, poly.closed, poly.source_id)


def tangents(poly: AnchoredPolyline) -> np.ndarray:
    """Unit tangent at every sample: central differences, one-sided at open ends."""
    pts = poly.points
    n = len(pts)
    if poly.closed:
        fwd = np.roll(pts, -1, axis=0)
        bwd = np.roll(pts, 1, axis=0)
        diff = fwd - bwd
    else:
        diff = np.empty_like(pts)
        diff[1:-1] = pts[2:] - pts[:-2]
        diff[0] = pts[1] - pts[0]
        diff[-1] = pts[-1] - pts[-2]
    norms = np.linalg.norm(diff, axis=1)
    if np.any(norms < 1e-300):
        bad = int(np.argmin(norms))
        raise ZeroTangentError(f"coincident neighbors around sample {bad}")
    return diff / norms[:, None]


def tangent_at(poly: AnchoredPolyline, i: int) -> np.ndarray:
    if not 0 <= i < len(poly):
        raise OutOfDomainError(f"sample index {i} out of range")
    return tangents(poly)[i]


def interior_angles(poly: AnchoredPolyline) -> np.ndarray:
    """Interior polyline angle in [0, pi] per sample; NaN at open endpoints."""
    pts = poly.points
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    u = prev - pts
    v = nxt - pts
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    denom = nu * nv
    safe = denom > 0
    cosang = np.where(safe, np.einsum("ij,ij->i", u, v) / np.where(safe, denom, 1.0), 1.0)
    ang = np.arccos(np.clip(cosang, -1.0, 1.0))
    if not poly.closed:
        ang[0] = np.nan
        ang[-1] = np.nan
    return ang


def angle_at(poly: AnchoredPolyline, i: int) -> float:
    """Interior angle at sample i.  Endpoints of open curves are out of domain."""
    if not 0 <= i < len(poly):
        raise OutOfDomainError(f"sample index {i} out of range")
    if not poly.closed and (i == 0 or i == len(poly) - 1):
        raise OutOfDomainError(f"angle undefined at endpoint {i}")
    return float(interior_angles(poly)[i])


# ---------------------------------------------------------------------------
# cameras and projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Viewport:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("viewport must have positive extent")

    @property
    def diagonal_px(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def norm_scale(self) -> float:
        """Pixels-to-normalized scale: longer side maps to [-1, 1]."""
        return 2.0 / max(self.width, self.height)

    @property
    def norm_diagonal(self) -> float:
        """Image diagonal in normalized units (2*sqrt(2) for square viewports)."""
        return self.diagonal_px * self.norm_scale

    def aspect_scale(self) -> np.ndarray:
        """Per-axis factor mapping NDC to normalized image space."""
        m = max(self.width, self.height)
        return np.array([self.width / m, self.height / m], dtype=np.float64)

    def px_to_norm(self, xy_px: np.ndarray) -> np.ndarray:
        xy_px = np.asarray(xy_px, dtype=np.float64)
        s = self.norm_scale
        out = np.empty_like(xy_px)
        out[..., 0] = (xy_px[..., 0] - self.width / 2.0) * s
        out[..., 1] = (self.height / 2.0 - xy_px[..., 1]) * s  # SVG y is down
        return out

    def norm_to_px(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        s = self.norm_scale
        out = np.empty_like(xy)
        out[..., 0] = xy[..., 0] / s + self.width / 2.0
        out[..., 1] = self.height / 2.0 - xy[..., 1] / s
        return out


@dataclass(frozen=True)
class CameraRig:
    """Projection + modelview matrices, their product, and the viewport."""

    projection: np.ndarray
    modelview: np.ndarray
    viewport: Viewport
    orthographic: bool = False
    combined: np.ndarray = field(init=False)

    def __post_init__(self):
        P = np.ascontiguousarray(np.asarray(self.projection, dtype=np.float64))
        M = np.ascontiguousarray(np.asarray(self.modelview, dtype=np.float64))
        if P.shape != (4, 4) or M.shape != (4, 4):
            raise ValueError("projection and modelview must be 4x4")
        if not (np.isfinite(P).all() and np.isfinite(M).all()):
            raise ValueError("camera matrices must be finite")
        object.__setattr__(self, "projection", P)
        object.__setattr__(self, "modelview", M)
        object.__setattr__(self, "combined", P @ M)

    def eye(self) -> np.ndarray:
        """Camera position in world space (perspective rigs)."""
        h = np.linalg.inv(self.modelview) @ np.array([0.0, 0.0, 0.0, 1.0])
        return h[:3] / h[3]

    def view_axis(self) -> np.ndarray:
        """World-space direction the camera looks along."""
        d = np.linalg.inv(self.modelview)[:3, :3] @ np.array([0.0, 0.0, -1.0])
        return d / np.linalg.norm(d)

    def view_dirs(self, points: np.ndarray) -> np.ndarray:
        """Unit view vector (camera toward point) per world-space point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.orthographic:
            return np.broadcast_to(self.view_axis(), points.shape).copy()
        v = points - self.eye()
        return v / np.linalg.norm(v, axis=1, keepdims=True)


def clip_coords(points: np.ndarray, rig: CameraRig,
                dev: np.ndarray | None = None) -> np.ndarray:
    """Homogeneous 4-vectors dev @ C @ [p;1] (dev optional, per-point or shared)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    h = np.empty((len(points), 4), dtype=np.float64)
    h[:, :3] = points
    h[:, 3] = 1.0
    h = h @ rig.combined.T
    if dev is not None:
        dev = np.asarray(dev, dtype=np.float64)
        if dev.ndim == 2:
            h = h @ dev.T
        else:
            h = np.einsum("nij,nj->ni", dev, h)
    return h


def perspective_divide(h: np.ndarray, points: np.ndarray | None = None) -> np.ndarray:
    w = h[:, 3]
    bad = np.abs(w) < W_EPSILON
    if np.any(bad):
        i = int(np.argmax(bad))
        p = points[i] if points is not None else h[i, :3]
        raise ProjectionSingularityError(p, w[i])
    return h[:, :2] / w[:, None]


def proj_points(points: np.ndarray, rig: CameraRig,
                dev: np.ndarray | None = None) -> np.ndarray:
    """Project 3D points through the (optionally deviated) camera: NDC x,y."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return perspective_divide(clip_coords(points, rig, dev), points)


def proj(point, rig: CameraRig, dev: np.ndarray | None = None) -> np.ndarray:
    """Single-point version of :func:`proj_points`."""
    return proj_points(np.asarray(point, dtype=np.float64)[None, :], rig, dev)[0]


def proj_image(points: np.ndarray, rig: CameraRig,
               dev: np.ndarray | None = None) -> np.ndarray:
    """Project into normalized image space (NDC corrected for viewport aspect)."""
    return proj_points(points, rig, dev) * rig.viewport.aspect_scale()


def identity_deviation() -> np.ndarray:
    return np.eye(4, dtype=np.float64)


def is_valid_deviation(m: np.ndarray) -> bool:
    m = np.asarray(m)
    return m.shape == (4, 4) and np.isfinite(m).all() and m[3, 3] == 1.0


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------

def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """3x3 rotation by ``angle`` radians about a unit ``axis`` (Rodrigues)."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"axis must be unit length, |axis|={n}")
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotate_object(rig: CameraRig, axis, angle: float) -> CameraRig:
    """Rig viewing the object rotated about ``axis`` by ``angle`` radians."""
    if angle == 0.0:
        return rig
    R4 = np.eye(4)
    R4[:3, :3] = rotation_about_axis(axis, angle)
    return CameraRig(rig.projection, rig.modelview @ R4, rig.viewport, rig.orthographic)


# ---------------------------------------------------------------------------
# Chamfer evaluation
# ---------------------------------------------------------------------------

def chamfer_l1(a: np.ndarray, b: np.ndarray, normalizer: float) -> float:
    """Symmetric mean L1 nearest-neighbor distance between two point sets,
    divided by ``normalizer`` (typically the image diagonal)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise DegenerateInputError("chamfer distance needs non-empty point sets")
    if normalizer <= 0:
        raise ValueError("normalizer must be positive")
    d_ab, _ = cKDTree(b).query(a, p=1)
    d_ba, _ = cKDTree(a).query(b, p=1)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba))) / normalizer


def polyline_points(curves) -> np.ndarray:
    """Stack the sample points of a list of polylines into one (n, 2) array."""
    arrays = [c.points for c in curves]
    if not arrays:
        raise DegenerateInputError("no curves to collect points from")
    return np.vstack(arrays)


def mean_discrete_acceleration(curves) -> float:
    """Mean second-difference magnitude over interior samples of all curves.

    Used as a wobble statistic: resampled smooth curves have low values,
    high-frequency artifacts inflate it.
    """
    total = 0.0
    count = 0
    for c in curves:
        pts = c.points
        if c.closed:
            acc = np.roll(pts, -1, axis=0) - 2 * pts + np.roll(pts, 1, axis=0)
        else:
            if len(pts) < 3:
                continue
            acc = pts[2:] - 2 * pts[1:-1] + pts[:-2]
        total += float(np.sum(np.linalg.norm(acc, axis=1)))
        count += len(acc)
    return total / count if count else 0.0
