import math
from collections import Counter

import numpy as np
import pytest

from persketch import cameras
from persketch.bvh import BVH, brute_force_hits
from persketch.contour import (ContourSet, classify_edges, extract_contours,
                               project_contours, sample_visibility,
                               visibility_trim)
from persketch.errors import DegenerateInputError
from persketch.geom import Viewport, proj_image
from persketch.mesh import TriangleMesh, load_obj, save_obj
from persketch.shapes import bottle, cube, icosphere, single_triangle, torus

VP = Viewport(1024, 1024)
THREE_QUARTER = cameras.pinhole_rig([2.4, 1.9, 2.9], [0, 0, 0], [0, 1, 0], 40.0, VP)
FRONT_ORTHO = cameras.ortho_rig([0, 0, 5], [0, 0, 0], [0, 1, 0], 1.5, VP)


def edge_key(a, b):
    return (min(a, b), max(a, b))


def curve_edges(curve):
    """Mesh-vertex edges covered by a chain, reconstructed from its anchors."""
    return len(curve) if curve.closed else len(curve) - 1


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def test_cube_front_view_silhouette_is_front_face_outline():
    cset = extract_contours(cube(), FRONT_ORTHO)
    sil = [c for c, k in cset if k == "silhouette"]
    assert len(sil) == 1 and sil[0].closed and len(sil[0]) == 4
    # the four silhouette vertices are exactly the +z face corners
    assert np.allclose(sil[0].anchors[:, 2], 1.0)


def test_cube_front_view_sharp_edges():
    # threshold 60 degrees: every cube edge is sharp; 4 become silhouette
    cset = extract_contours(cube(), FRONT_ORTHO, math.radians(60))
    kinds = Counter(cset.kinds)
    assert kinds["silhouette"] == 1
    assert sum(curve_edges(c) for c, k in cset if k == "sharp") == 8
    assert sum(curve_edges(c) for c, _ in cset) == 12


def test_cube_three_quarter_view_visible_edge_count():
    # generic view showing three faces: hexagonal outline (6 edges) plus the
    # 3 near-corner sharp edges are visible; the 3 far-corner edges are hidden
    mesh = cube()
    cset = extract_contours(mesh, THREE_QUARTER)
    sil = [c for c, k in cset if k == "silhouette"]
    assert len(sil) == 1 and sil[0].closed and len(sil[0]) == 6
    assert sum(curve_edges(c) for c, k in cset if k == "sharp") == 6

    projected = project_contours(cset, THREE_QUARTER, 0.02)
    trimmed = visibility_trim(projected, mesh, THREE_QUARTER)
    kinds = Counter(trimmed.kinds)
    assert kinds == {"silhouette": 1, "sharp": 3}
    # 6 outline + 3 interior = 9 visible cube edges in total
    sil_t = [c for c, k in trimmed if k == "silhouette"][0]
    assert sil_t.closed


def test_single_triangle_boundary_chain():
    cset = extract_contours(single_triangle(), THREE_QUARTER)
    assert cset.kinds == ["boundary"]
    curve = cset.curves[0]
    assert curve.closed and len(curve) == 3


def test_silhouette_sign_test_per_edge():
    mesh = icosphere(3)
    rig = THREE_QUARTER
    edges, kinds = classify_edges(mesh, rig, math.radians(60))
    _, adj = mesh.edges()
    n_sil = 0
    for e, kind in enumerate(kinds):
        if kind != "silhouette":
            continue
        n_sil += 1
        mid = mesh.vertices[edges[e]].mean(axis=0)
        v = rig.view_dirs(mid[None])[0]
        d1 = float(mesh.face_normals[adj[e][0]] @ v)
        d2 = float(mesh.face_normals[adj[e][1]] @ v)
        assert np.sign(d1) * np.sign(d2) <= 0
    assert n_sil > 0


def test_sphere_silhouette_closed_loop():
    cset = extract_contours(icosphere(3), THREE_QUARTER)
    assert all(k == "silhouette" for k in cset.kinds)
    assert any(c.closed for c in cset.curves)


def test_chaining_partitions_edges():
    mesh = cube()
    edges, kinds = classify_edges(mesh, THREE_QUARTER, math.radians(60))
    cset = extract_contours(mesh, THREE_QUARTER)
    covered = []
    for curve, _ in cset:
        verts = [int(np.argmin(np.abs(mesh.vertices - a).sum(axis=1)))
                 for a in curve.anchors]
        pairs = list(zip(verts[:-1], verts[1:]))
        if curve.closed:
            pairs.append((verts[-1], verts[0]))
        covered += [edge_key(a, b) for a, b in pairs]
    assert len(covered) == len(set(covered))  # no edge twice
    labeled = {edge_key(*edges[e]) for e, k in enumerate(kinds) if k is not None}
    assert set(covered) == labeled  # every labeled edge appears exactly once


def test_extraction_is_deterministic():
    a = extract_contours(cube(), THREE_QUARTER)
    b = extract_contours(cube(), THREE_QUARTER)
    assert a.kinds == b.kinds
    for ca, cb in zip(a.curves, b.curves):
        np.testing.assert_array_equal(ca.points, cb.points)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_project_contours_round_trip():
    cset = extract_contours(cube(), THREE_QUARTER)
    projected = project_contours(cset, THREE_QUARTER, 0.015)
    for curve, _ in projected:
        np.testing.assert_allclose(proj_image(curve.anchors, THREE_QUARTER),
                                   curve.points, atol=1e-10)


def test_cube_front_view_outline_is_square():
    cset = project_contours(extract_contours(cube(), FRONT_ORTHO), FRONT_ORTHO, 0.05)
    sil = [c for c, k in cset if k == "silhouette"][0]
    xs, ys = sil.points[:, 0], sil.points[:, 1]
    on_boundary = (np.isclose(np.abs(xs), 2 / 3, atol=1e-9)
                   | np.isclose(np.abs(ys), 2 / 3, atol=1e-9))
    assert on_boundary.all()  # half-height 1.5 maps the unit cube to +-2/3


def test_perspective_near_face_larger_than_far_face():
    d = 5.0
    rig = cameras.pinhole_rig([0, 0, d], [0, 0, 0], [0, 1, 0], 45.0, VP)
    mesh = cube()
    near = proj_image(np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 1.0]]), rig)
    far = proj_image(np.array([[1.0, 1.0, -1.0], [1.0, -1.0, -1.0]]), rig)
    ratio = np.linalg.norm(near[0] - near[1]) / np.linalg.norm(far[0] - far[1])
    assert ratio == pytest.approx((d + 1.0) / (d - 1.0), rel=1e-9)


def test_project_contours_uses_perspective_correct_anchors():
    # midpoints of receding edges must project back onto their 2D samples
    cset = extract_contours(cube(), THREE_QUARTER)
    projected = project_contours(cset, THREE_QUARTER, 0.003)
    worst = max(np.max(np.abs(proj_image(c.anchors, THREE_QUARTER) - c.points))
                for c, _ in projected)
    assert worst < 1e-10


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------

def test_convex_silhouette_fully_visible():
    mesh = icosphere(2)
    cset = project_contours(extract_contours(mesh, THREE_QUARTER), THREE_QUARTER, 0.02)
    trimmed = visibility_trim(cset, mesh, THREE_QUARTER)
    assert sum(len(c) for c in trimmed.curves) == sum(len(c) for c in cset.curves)


def test_cube_back_edges_removed():
    mesh = cube()
    cset = project_contours(extract_contours(mesh, THREE_QUARTER), THREE_QUARTER, 0.02)
    trimmed = visibility_trim(cset, mesh, THREE_QUARTER)
    assert Counter(trimmed.kinds)["sharp"] == 3


def test_torus_inner_silhouette_partially_hidden_with_ray_oracle():
    mesh = torus()
    rig = cameras.pinhole_rig([3.0, 0.35, 0.2], [0, 0, 0], [0, 1, 0], 40.0, VP)
    cset = project_contours(extract_contours(mesh, rig), rig, 0.02)
    trimmed = visibility_trim(cset, mesh, rig)
    assert sum(len(c) for c in trimmed.curves) < sum(len(c) for c in cset.curves)
    # oracle: every retained sample passes an exhaustive (BVH-free) ray test
    eye = rig.eye()
    margin = 1e-4 * mesh.bbox_diagonal
    for curve, _ in trimmed:
        for a in curve.anchors:
            d = a - eye
            dist = np.linalg.norm(d)
            ts = brute_force_hits(mesh, eye, d / dist)
            assert not np.any(ts < dist - margin)


def test_visibility_trim_is_fixed_point():
    mesh = cube()
    cset = project_contours(extract_contours(mesh, THREE_QUARTER), THREE_QUARTER, 0.02)
    once = visibility_trim(cset, mesh, THREE_QUARTER)
    twice = visibility_trim(once, mesh, THREE_QUARTER)
    assert len(once) == len(twice)
    for a, b in zip(once.curves, twice.curves):
        np.testing.assert_array_equal(a.points, b.points)


def test_bvh_matches_brute_force():
    mesh = bottle()
    caster = BVH(mesh)
    rng = np.random.default_rng(2)
    for _ in range(200):
        origin = rng.uniform(-3, 3, 3)
        direction = rng.normal(0, 1, 3)
        direction /= np.linalg.norm(direction)
        ts, _ = caster.all_hits(origin, direction)
        expected = brute_force_hits(mesh, origin, direction)
        np.testing.assert_allclose(np.sort(ts), expected, atol=1e-9)


def test_empty_contours_raise():
    from persketch.errors import EmptyContourError
    with pytest.raises(EmptyContourError):
        project_contours(ContourSet([], []), THREE_QUARTER, 0.02)
    # a camera inside a closed mesh sees only back faces: no silhouette, and a
    # sharp threshold above the cube's 90-degree creases leaves nothing at all
    inside = cameras.pinhole_rig([0, 0, 0], [0, 0, -1], [0, 1, 0], 60.0, VP)
    with pytest.raises(EmptyContourError):
        extract_contours(cube(), inside, sharp_angle=math.radians(120))


# ---------------------------------------------------------------------------
# mesh I/O
# ---------------------------------------------------------------------------

def test_obj_round_trip_and_normalization(tmp_path):
    mesh = cube()
    path = tmp_path / "cube.obj"
    save_obj(mesh, path)
    loaded = load_obj(path)
    assert loaded.vertices.shape == mesh.vertices.shape
    lo, hi = loaded.bbox
    np.testing.assert_allclose(lo, [-1, -1, -1], atol=1e-12)
    np.testing.assert_allclose(hi, [1, 1, 1], atol=1e-12)


def test_obj_polygon_triangulation_and_degenerate_cleanup(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
        "f 1 2 3 4\n"      # quad -> two triangles
        "f 1 1 2\n",       # degenerate, dropped
        encoding="utf-8")
    mesh = load_obj(path, normalize=False)
    assert len(mesh.faces) == 2


def test_mesh_rejects_empty():
    with pytest.raises(DegenerateInputError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))  # zero-area only
