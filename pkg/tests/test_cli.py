import json

import numpy as np
import pytest
from click.testing import CliRunner

from persketch import cameras
from persketch.cli import main
from persketch.deviation import DeviationField, FieldConfig
from persketch.geom import AnchoredPolyline, Viewport, resample
from persketch.inference import render_analytic
from persketch.mesh import save_obj
from persketch.shapes import cube
from persketch.svgio import parse_svg, read_contours, write_svg
from persketch.training import TrainConfig

from util import three_quarter_rig

FAST_CONFIG = {
    "sample_interval": 0.04,
    "smooth_pairs": 256,
    "depth_pairs": 256,
    "smooth_grid_res": 4,
    "hidden_layers": 2,
    "hidden_width": 24,
    "iters_init": 30,
    "iters_aug": 10,
    "aug_stage1": [-2, 2],
    "aug_stage2": [-4, 4],
    "candidate_radius": 0.08,
}


@pytest.fixture()
def workspace(tmp_path):
    mesh_path = tmp_path / "cube.obj"
    save_obj(cube(), mesh_path)
    cam_path = tmp_path / "camera.json"
    cameras.save_camera(three_quarter_rig(), cam_path)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(FAST_CONFIG), encoding="utf-8")
    return tmp_path


def run_cli(args, expect_exit=0):
    runner = CliRunner()
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == expect_exit, result.output
    return result


def make_sketch(workspace, jitter=0.0, seed=0):
    """Write a sketch that copies the extracted contours, optionally jittered.
    Returns ground-truth per-(curve, vertex) stroke positions."""
    cfg = TrainConfig(**FAST_CONFIG)
    rig = cameras.load_camera(workspace / "camera.json")
    cset = render_analytic(cube(), rig, cfg)
    rng = np.random.default_rng(seed)
    strokes = []
    truth = {}
    for k, c in enumerate(cset.curves):
        pts = c.points + rng.normal(0.0, jitter, c.points.shape)
        strokes.append(AnchoredPolyline(pts, None, c.closed, f"stroke-{k}"))
        truth[c.source_id] = pts
    write_svg(workspace / "sketch.svg", [(strokes, "stroke", "#000000", 1.5)],
              rig.viewport)
    return truth


def pipeline_to_matches(workspace):
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "extract", workspace / "cube.obj", workspace / "camera.json"])
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "match", workspace / "anchors.json", workspace / "sketch.svg"])


def test_full_pipeline_smoke(workspace):
    make_sketch(workspace, jitter=0.004)
    pipeline_to_matches(workspace)
    for name in ("contours.svg", "anchors.json", "matches.json", "overlay.svg"):
        assert (workspace / name).is_file()
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "--stage", "init", "train",
             workspace / "anchors.json", workspace / "sketch.svg",
             workspace / "matches.json", workspace / "camera.json"])
    assert (workspace / "field.json").is_file()
    assert (workspace / "loss_log.csv").is_file()
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "infer", workspace / "field.json", workspace / "cube.obj",
             workspace / "camera.json"])
    assert (workspace / "deviated.svg").is_file()
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "eval", workspace / "field.json", workspace / "cube.obj",
             workspace / "camera.json", workspace / "sketch.svg"])
    metrics = json.loads((workspace / "metrics.json").read_text(encoding="utf-8"))
    assert "chamfer_analytic_vs_sketch" in metrics
    assert "chamfer_deviated_vs_sketch" in metrics
    assert metrics["normalizer"] == pytest.approx(2.0 * np.sqrt(2.0))


def test_missing_mesh_exits_2(workspace):
    run_cli(["--out", workspace, "extract", workspace / "missing.obj",
             workspace / "camera.json"], expect_exit=2)


def test_degenerate_camera_exits_3(workspace):
    cam = workspace / "inside.json"
    cameras.save_camera(
        cameras.pinhole_rig([0, 0, 0], [0, 0, -1], [0, 1, 0], 60.0,
                            Viewport(512, 512)), cam)
    cfg = workspace / "cfg_sharp.json"
    cfg.write_text(json.dumps({**FAST_CONFIG, "sharp_angle_deg": 120.0}),
                   encoding="utf-8")
    run_cli(["--config", cfg, "--out", workspace, "extract",
             workspace / "cube.obj", cam], expect_exit=3)


def test_empty_sketch_exits_2(workspace):
    make_sketch(workspace)
    (workspace / "sketch.svg").write_text(
        '<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"/>',
        encoding="utf-8")
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "extract", workspace / "cube.obj", workspace / "camera.json"])
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "match", workspace / "anchors.json", workspace / "sketch.svg"],
            expect_exit=2)


def test_extract_output_rereads_losslessly(workspace):
    make_sketch(workspace)
    pipeline_to_matches(workspace)
    cfg = TrainConfig(**FAST_CONFIG)
    rig = cameras.load_camera(workspace / "camera.json")
    direct = render_analytic(cube(), rig, cfg)
    loaded, _ = read_contours(workspace / "anchors.json")
    assert len(loaded) == len(direct)
    for a, b in zip(loaded.curves, direct.curves):
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.anchors, b.anchors)


def test_exact_copy_sketch_matches_everything(workspace):
    make_sketch(workspace, jitter=0.0)
    pipeline_to_matches(workspace)
    matches = json.loads((workspace / "matches.json").read_text(encoding="utf-8"))
    assert matches["unmatched"] == []
    assert all(e["alpha"] == pytest.approx(1.0) for e in matches["entries"])
    assert all(e["sv"] == pytest.approx(1.0) for e in matches["entries"])


def test_jittered_sketch_matches_near_ground_truth(workspace):
    sigma1 = 0.02
    truth = make_sketch(workspace, jitter=sigma1 / 2, seed=3)
    pipeline_to_matches(workspace)
    matches = json.loads((workspace / "matches.json").read_text(encoding="utf-8"))

    cfg = TrainConfig(**FAST_CONFIG)
    rig = cameras.load_camera(workspace / "camera.json")
    from persketch.cli import _prepare_strokes
    from persketch.svgio import read_strokes
    raw, _ = read_strokes(workspace / "sketch.svg")
    strokes = {s.source_id: s2 for s, s2 in
               zip(raw, _prepare_strokes(raw, cfg.interval_for(rig.viewport)))}

    total, good = 0, 0
    for e in matches["entries"]:
        q_match = strokes[e["stroke"]].points[e["j"]]
        # stroke-k mirrors curve k, so ground truth is that stroke's vertex i
        cid = e["curve"]
        gt = truth[cid][e["i"]]
        total += 1
        good += np.linalg.norm(q_match - gt) <= 2 * sigma1
    assert total > 0
    assert good / total >= 0.95


def test_infer_identity_checkpoint_coincides_with_analytic(workspace):
    ckpt = workspace / "identity.json"
    DeviationField(FieldConfig(hidden_layers=2, hidden_width=24, seed=0)).save(ckpt)
    run_cli(["--config", workspace / "config.json", "--out", workspace,
             "infer", ckpt, workspace / "cube.obj", workspace / "camera.json"])
    elements, _ = parse_svg(workspace / "deviated.svg")
    analytic = [e for e in elements if e.elem_class == "analytic"]
    deviated = [e for e in elements if e.elem_class == "deviated"]
    assert len(analytic) == len(deviated) > 0
    for a, d in zip(analytic, deviated):
        np.testing.assert_array_equal(a.points_px, d.points_px)


def test_truncated_checkpoint_exits_2(workspace):
    ckpt = workspace / "broken.json"
    ckpt.write_text("{\"format\": \"deviation-field/v1\"", encoding="utf-8")
    run_cli(["--out", workspace, "infer", ckpt, workspace / "cube.obj",
             workspace / "camera.json"], expect_exit=2)


def test_extract_and_match_are_deterministic(workspace, tmp_path):
    make_sketch(workspace, jitter=0.003, seed=5)
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    for out in (out1, out2):
        out.mkdir(exist_ok=True)
        run_cli(["--config", workspace / "config.json", "--out", out,
                 "--deterministic", "extract", workspace / "cube.obj",
                 workspace / "camera.json"])
        run_cli(["--config", workspace / "config.json", "--out", out,
                 "--deterministic", "match", out / "anchors.json",
                 workspace / "sketch.svg"])
    for name in ("contours.svg", "anchors.json", "matches.json", "overlay.svg"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
