"""Minimal SVG polyline reader/writer plus the contour anchor sidecar.

Only the subset this project emits is supported: absolute M/L/Z path data and
polyline/polygon elements.  Colors follow the overlay convention: analytic
contours orange, strokes and deviated contours black.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .contour import ContourSet
from .errors import PersketchError
from .geom import AnchoredPolyline, Viewport

COLOR_ANALYTIC = "#FFA500"
COLOR_INK = "#000000"
COLOR_MATCH = "#4DA6FF"

_FLOAT_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


@dataclass
class SvgElement:
    points_px: np.ndarray
    closed: bool
    elem_id: str
    elem_class: str


def _fmt(x: float) -> str:
    return repr(float(x))


def path_data(points_px: np.ndarray, closed: bool) -> str:
    parts = [f"M {_fmt(points_px[0, 0])} {_fmt(points_px[0, 1])}"]
    for x, y in points_px[1:]:
        parts.append(f"L {_fmt(x)} {_fmt(y)}")
    if closed:
        parts.append("Z")
    return " ".join(parts)


def write_svg(path, layers, viewport: Viewport) -> None:
    """Write layered polylines.  ``layers`` is a list of
    (curves, class_name, color, width) with curves in normalized image space."""
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{viewport.width}" '
        f'height="{viewport.height}" viewBox="0 0 {viewport.width} {viewport.height}">',
    ]
    counter = 0
    for curves, cls, color, width in layers:
        for curve in curves:
            px = viewport.norm_to_px(curve.points)
            lines.append(
                f'  <path id="p{counter}" class="{cls}" fill="none" stroke="{color}" '
                f'stroke-width="{width}" d="{path_data(px, curve.closed)}"/>')
            counter += 1
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_svg(path) -> tuple[list[SvgElement], Viewport]:
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise PersketchError(f"cannot parse SVG {path}: {exc}") from exc
    root = tree.getroot()
    try:
        vp = Viewport(int(round(float(root.get("width")))),
                      int(round(float(root.get("height")))))
    except (TypeError, ValueError) as exc:
        raise PersketchError(f"SVG {path} lacks width/height") from exc
    elements = []
    for elem in root.iter():
        tag = elem.tag.rsplit("}", 1)[-1]
        if tag == "path":
            d = elem.get("d", "")
            closed = "Z" in d.upper()
            nums = [float(tok) for tok in _FLOAT_RE.findall(d)]
            if len(nums) < 4 or len(nums) % 2:
                continue
            pts = np.array(nums, dtype=np.float64).reshape(-1, 2)
        elif tag in ("polyline", "polygon"):
            nums = [float(tok) for tok in _FLOAT_RE.findall(elem.get("points", ""))]
            if len(nums) < 4 or len(nums) % 2:
                continue
            pts = np.array(nums, dtype=np.float64).reshape(-1, 2)
            closed = tag == "polygon"
        else:
            continue
        elements.append(SvgElement(pts, closed, elem.get("id", ""),
                                   elem.get("class", "")))
    return elements, vp


def read_strokes(path) -> tuple[list[AnchoredPolyline], Viewport]:
    """Sketch strokes as 2D polylines in normalized image space."""
    elements, vp = parse_svg(path)
    strokes = []
    for k, el in enumerate(elements):
        if len(el.points_px) < 2:
            continue
        strokes.append(AnchoredPolyline(vp.px_to_norm(el.points_px), None,
                                        closed=el.closed,
                                        source_id=el.elem_id or f"stroke-{k}"))
    if not strokes:
        raise PersketchError(f"no strokes found in {path}")
    return strokes, vp


# ---------------------------------------------------------------------------
# contour set + anchor sidecar
# ---------------------------------------------------------------------------

def write_contours(svg_path, sidecar_path, cset: ContourSet, viewport: Viewport,
                   color: str = COLOR_ANALYTIC) -> None:
    """SVG (one path per curve, kind as class) plus a JSON sidecar carrying the
    exact normalized samples and per-sample 3D anchors for each path id."""
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{viewport.width}" '
        f'height="{viewport.height}" viewBox="0 0 {viewport.width} {viewport.height}">',
    ]
    sidecar = {"viewport": {"width": viewport.width, "height": viewport.height},
               "paths": []}
    for k, (curve, kind) in enumerate(cset):
        pid = f"curve-{k}"
        px = viewport.norm_to_px(curve.points)
        lines.append(
            f'  <path id="{pid}" class="{kind}" fill="none" stroke="{color}" '
            f'stroke-width="1.5" d="{path_data(px, curve.closed)}"/>')
        sidecar["paths"].append({
            "id": pid,
            "kind": kind,
            "closed": curve.closed,
            "source_id": curve.source_id,
            "samples": curve.points.tolist(),
            "anchors": curve.anchors.tolist(),
        })
    lines.append("</svg>")
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_contours(sidecar_path) -> tuple[ContourSet, Viewport]:
    """Rebuild a ContourSet from the anchor sidecar (exact round trip)."""
    try:
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        vp = Viewport(int(data["viewport"]["width"]), int(data["viewport"]["height"]))
        curves = []
        kinds = []
        for entry in data["paths"]:
            curves.append(AnchoredPolyline(
                np.array(entry["samples"], dtype=np.float64),
                np.array(entry["anchors"], dtype=np.float64),
                closed=bool(entry["closed"]),
                source_id=entry.get("source_id") or entry["id"]))
            kinds.append(entry["kind"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise PersketchError(f"invalid contour sidecar {sidecar_path}: {exc}") from exc
    return ContourSet(curves, kinds), vp


def match_segments(curves, strokes, matches) -> list[AnchoredPolyline]:
    """Short segments joining each matched contour vertex to its stroke vertex."""
    stroke_by_id = {s.source_id: s for s in strokes}
    curve_by_id = {c.source_id: c for c in curves}
    segs = []
    for e in matches.entries:
        p = curve_by_id[e.curve_id].points[e.vertex]
        q = stroke_by_id[e.stroke_id].points[e.stroke_vertex]
        if np.allclose(p, q):
            continue
        segs.append(AnchoredPolyline(np.vstack([p, q]), None,
                                     source_id=f"m-{e.curve_id}-{e.vertex}"))
    return segs
