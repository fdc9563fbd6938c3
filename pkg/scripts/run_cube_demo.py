#!/usr/bin/env python3
"""End-to-end demo: learn a deviation on a cube with a jittered synthetic
sketch, then render it from the training view and a rotated view.

Generates every input it needs (mesh, camera, sketch) and drives the CLI:

    python scripts/run_cube_demo.py --out demo_out [--full]

--full runs both self-augmentation stages (slower); default stops after the
initial fit.
"""

import argparse
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from persketch import cameras
from persketch.geom import AnchoredPolyline, Viewport, rotate_object
from persketch.inference import render_analytic
from persketch.mesh import save_obj
from persketch.shapes import cube
from persketch.svgio import write_svg
from persketch.training import TrainConfig

CONFIG = {
    "sample_interval": 0.02,
    "iters_init": 600,
    "iters_aug": 250,
    "smooth_pairs": 2048,
    "depth_pairs": 2048,
    "candidate_radius": 0.08,
    "seed": 7,
}


def cli(args):
    cmd = [sys.executable, "-m", "persketch.cli"] + [str(a) for a in args]
    print("+", " ".join(cmd[2:]))
    subprocess.run(cmd, check=True)


def make_inputs(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    save_obj(cube(), out / "cube.obj")
    vp = Viewport(1024, 1024)
    rig = cameras.pinhole_rig([2.4, 1.9, 2.9], [0, 0, 0], [0, 1, 0], 40.0, vp)
    cameras.save_camera(rig, out / "camera.json")
    cameras.save_camera(rotate_object(rig, np.array([0.0, 1.0, 0.0]),
                                      math.radians(25.0)),
                        out / "camera_rotated.json")
    (out / "config.json").write_text(json.dumps(CONFIG, indent=1), encoding="utf-8")

    # synthetic "artist" sketch: smoothly jittered copy of the contours
    cfg = TrainConfig(**CONFIG)
    cset = render_analytic(cube(), rig, cfg)
    rng = np.random.default_rng(11)
    strokes = []
    for k, c in enumerate(cset.curves):
        raw = rng.normal(0.0, 0.012, c.points.shape)
        kernel = np.ones(7) / 7.0
        smooth = np.stack([np.convolve(raw[:, d], kernel, mode="same")
                           for d in range(2)], axis=1)
        bulge = 1.0 + 0.04 * np.sin(c.points[:, 0] * 2.0)  # mild stylization
        pts = c.points * bulge[:, None] + smooth
        strokes.append(AnchoredPolyline(pts, None, c.closed, f"stroke-{k}"))
    write_svg(out / "sketch.svg", [(strokes, "stroke", "#000000", 1.5)], vp)
    return rig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out", type=Path)
    ap.add_argument("--full", action="store_true",
                    help="run both self-augmentation stages")
    args = ap.parse_args()

    out = args.out
    make_inputs(out)
    common = ["--config", out / "config.json", "--out", out, "--deterministic"]

    cli(common + ["extract", out / "cube.obj", out / "camera.json"])
    cli(common + ["match", out / "anchors.json", out / "sketch.svg"])
    stage = ["--stage", "aug2" if args.full else "init"]
    cli(common + stage + ["train", out / "anchors.json", out / "sketch.svg",
                          out / "matches.json", out / "camera.json",
                          "--mesh", out / "cube.obj"])
    cli(common + ["infer", out / "field.json", out / "cube.obj",
                  out / "camera.json"])
    cli(common + ["eval", out / "field.json", out / "cube.obj",
                  out / "camera.json", out / "sketch.svg"])

    rotated = out / "rotated"
    rotated.mkdir(exist_ok=True)
    cli(["--config", out / "config.json", "--out", rotated, "--deterministic",
         "infer", out / "field.json", out / "cube.obj",
         out / "camera_rotated.json"])

    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    print("\nresults:")
    print(f"  analytic vs sketch chamfer: {metrics['chamfer_analytic_vs_sketch']:.3e}")
    print(f"  deviated vs sketch chamfer: {metrics['chamfer_deviated_vs_sketch']:.3e}")
    print(f"  same-view overlay: {out / 'deviated.svg'}")
    print(f"  rotated-view overlay: {rotated / 'deviated.svg'}")


if __name__ == "__main__":
    main()
