"""Command-line pipeline: extract, match, train, infer, eval, augment.

Exit codes: 0 ok, 2 input error (missing/unparseable files), 3 numerical
failure (singular projection, divergence, empty contours).
"""

from __future__ import annotations

import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
import torch

from . import cameras as cameras_mod
from . import svgio
from .contour import ContourSet
from .deviation import DeviationField
from .errors import (CheckpointError, EmptyContourError, PersketchError,
                     ProjectionSingularityError, TrainingDivergedError)
from .geom import AnchoredPolyline, chamfer_l1, polyline_points, resample, rotate_object
from .inference import render_analytic, render_deviated
from .losses import TrainingPair
from .matching import MatchEntry, MatchSet, match_curves
from .mesh import load_obj
from .training import (TrainConfig, TrainResult, VERTICAL_AXIS, self_augment,
                       train)

log = logging.getLogger("persketch")

EXIT_INPUT = 2
EXIT_NUMERICAL = 3

_INPUT_ERRORS = (FileNotFoundError, IsADirectoryError, PermissionError,
                 json.JSONDecodeError, CheckpointError)
_NUMERICAL_ERRORS = (ProjectionSingularityError, TrainingDivergedError,
                     EmptyContourError)


@dataclass
class ProjectManifest:
    """Resolved input paths for a pipeline invocation.

    ``validate`` checks existence up front so a command fails before any
    stage runs rather than halfway through.
    """

    mesh: Path | None = None
    sketch: Path | None = None
    camera: Path | None = None
    contours: Path | None = None
    anchors: Path | None = None
    matches: Path | None = None
    checkpoint: Path | None = None
    config: Path | None = None
    out_dir: Path = Path(".")
    stage: str = "aug2"

    def validate(self) -> None:
        for name in ("mesh", "sketch", "camera", "contours", "anchors",
                     "matches", "checkpoint", "config"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"{name} file not found: {p}")
        self.out_dir.mkdir(parents=True, exist_ok=True)


def _prepare_strokes(raw_strokes, interval: float):
    """Resample strokes that are not already at the target interval.

    A stroke whose segments are all within [0.5, 1.5] x interval already
    satisfies the sampling contract; re-resampling such a polyline would only
    shift samples at its corners (arc length along a sampled polyline cuts
    corners), which would break exact-copy matching.
    """
    out = []
    for s in raw_strokes:
        seg = np.linalg.norm(s.segment_vectors(), axis=1)
        if len(seg) and seg.max() <= 1.5 * interval and seg.mean() >= 0.5 * interval:
            out.append(s)
        else:
            out.append(resample(s, interval))
    return out


def _load_config(ctx) -> TrainConfig:
    cfg_path = ctx.obj.get("config")
    cfg = TrainConfig.from_file(cfg_path) if cfg_path else TrainConfig()
    if ctx.obj.get("seed") is not None:
        cfg.seed = ctx.obj["seed"]
    if ctx.obj.get("deterministic"):
        cfg.deterministic = True
        torch.set_num_threads(1)
    return cfg


def _out(ctx) -> Path:
    return Path(ctx.obj.get("out") or ".")


def _run(fn):
    try:
        fn()
    except _INPUT_ERRORS as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    except _NUMERICAL_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    except PersketchError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)


@click.group()
@click.option("--config", type=click.Path(), default=None, help="TOML/JSON config file")
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--deterministic", is_flag=True, help="single-threaded, reproducible runs")
@click.option("--out", type=click.Path(), default=".", help="output directory")
@click.option("--stage", type=click.Choice(["init", "aug1", "aug2"]), default="aug2",
              help="last training stage to run")
@click.pass_context
def main(ctx, config, seed, deterministic, out, stage):
    """Learn and apply spatially varying perspective deviation."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    ctx.obj = {"config": config, "seed": seed, "deterministic": deterministic,
               "out": out, "stage": stage}


@main.command()
@click.argument("mesh_path", metavar="MESH")
@click.argument("camera_path", metavar="CAMERA")
@click.pass_context
def extract(ctx, mesh_path, camera_path):
    """Extract visible contours of MESH under CAMERA -> contours.svg + anchors.json."""
    def go():
        cfg = _load_config(ctx)
        out_dir = _out(ctx)
        man = ProjectManifest(mesh=Path(mesh_path), camera=Path(camera_path),
                              out_dir=out_dir)
        man.validate()
        mesh = load_obj(man.mesh)
        rig = cameras_mod.load_camera(man.camera)
        cset = render_analytic(mesh, rig, cfg)
        svgio.write_contours(out_dir / "contours.svg", out_dir / "anchors.json",
                             cset, rig.viewport)
        click.echo(f"wrote {out_dir / 'contours.svg'} ({len(cset)} curves)")
    _run(go)


@main.command()
@click.argument("anchors_path", metavar="ANCHORS_JSON")
@click.argument("sketch_path", metavar="SKETCH_SVG")
@click.pass_context
def match(ctx, anchors_path, sketch_path):
    """Match contour curves to sketch strokes -> matches.json + overlay.svg."""
    def go():
        cfg = _load_config(ctx)
        out_dir = _out(ctx)
        man = ProjectManifest(anchors=Path(anchors_path), sketch=Path(sketch_path),
                              out_dir=out_dir)
        man.validate()
        cset, vp = svgio.read_contours(man.anchors)
        raw_strokes, _ = svgio.read_strokes(man.sketch)
        strokes = _prepare_strokes(raw_strokes, cfg.interval_for(vp))
        ms = match_curves(cset.curves, strokes, cfg.match_params())
        with open(out_dir / "matches.json", "w", encoding="utf-8") as fh:
            json.dump(ms.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        segs = svgio.match_segments(cset.curves, strokes, ms)
        svgio.write_svg(out_dir / "overlay.svg", [
            (cset.curves, "analytic", svgio.COLOR_ANALYTIC, 1.5),
            (strokes, "stroke", svgio.COLOR_INK, 1.5),
            (segs, "match", svgio.COLOR_MATCH, 0.6),
        ], vp)
        click.echo(f"matched {len(ms.entries)} vertices "
                   f"({len(ms.unmatched)} unmatched); wrote {out_dir / 'matches.json'}")
    _run(go)


def _load_pair(cfg, anchors_path, sketch_path, matches_path, camera_path) -> TrainingPair:
    cset, vp = svgio.read_contours(anchors_path)
    raw_strokes, _ = svgio.read_strokes(sketch_path)
    strokes = _prepare_strokes(raw_strokes, cfg.interval_for(vp))
    with open(matches_path, "r", encoding="utf-8") as fh:
        ms = MatchSet.from_dict(json.load(fh))
    rig = cameras_mod.load_camera(camera_path)
    return TrainingPair(cset.curves, strokes, rig, ms, provenance="artist")


@main.command(name="train")
@click.argument("anchors_path", metavar="ANCHORS_JSON")
@click.argument("sketch_path", metavar="SKETCH_SVG")
@click.argument("matches_path", metavar="MATCHES_JSON")
@click.argument("camera_path", metavar="CAMERA")
@click.option("--mesh", "mesh_path", default=None,
              help="mesh (required for augmentation stages)")
@click.pass_context
def train_cmd(ctx, anchors_path, sketch_path, matches_path, camera_path, mesh_path):
    """Fit the deviation field -> field.json checkpoint + loss_log.csv."""
    def go():
        cfg = _load_config(ctx)
        out_dir = _out(ctx)
        stage = ctx.obj.get("stage") or "aug2"
        man = ProjectManifest(anchors=Path(anchors_path), sketch=Path(sketch_path),
                              matches=Path(matches_path), camera=Path(camera_path),
                              mesh=Path(mesh_path) if mesh_path else None,
                              out_dir=out_dir, stage=stage)
        man.validate()
        if stage != "init" and man.mesh is None:
            raise PersketchError("augmentation stages need --mesh")
        pair = _load_pair(cfg, man.anchors, man.sketch, man.matches, man.camera)
        field = DeviationField(cfg.field_config(),
                               provenance={"pair": str(man.sketch), "seed": cfg.seed})
        ckpt = out_dir / "field.json"
        history = []
        try:
            result = train([pair], cfg, field, stage="init")
            history += result.history
            if stage in ("aug1", "aug2"):
                mesh = load_obj(man.mesh)
                stages = ("aug1",) if stage == "aug1" else ("aug1", "aug2")
                result = self_augment(field, pair, mesh, cfg, stages=stages)
                history += result.history
        except TrainingDivergedError as exc:
            field.save(ckpt)  # field holds the last finite state
            TrainResult(field, history).write_log(out_dir / "loss_log.csv")
            click.echo(f"numerical failure: {exc}; last good checkpoint kept", err=True)
            sys.exit(EXIT_NUMERICAL)
        field.save(ckpt)
        TrainResult(field, history).write_log(out_dir / "loss_log.csv")
        click.echo(f"wrote {ckpt} (final loss {history[-1]['total']:.3e})")
    _run(go)


@main.command()
@click.argument("checkpoint", metavar="FIELD_CKPT")
@click.argument("mesh_path", metavar="MESH")
@click.argument("camera_path", metavar="CAMERA")
@click.pass_context
def infer(ctx, checkpoint, mesh_path, camera_path):
    """Render deviated contours (black) over analytic ones (orange)."""
    def go():
        cfg = _load_config(ctx)
        out_dir = _out(ctx)
        man = ProjectManifest(checkpoint=Path(checkpoint), mesh=Path(mesh_path),
                              camera=Path(camera_path), out_dir=out_dir)
        man.validate()
        field = DeviationField.load(man.checkpoint)
        mesh = load_obj(man.mesh)
        rig = cameras_mod.load_camera(man.camera)
        analytic = render_analytic(mesh, rig, cfg)
        deviated = render_deviated(field, mesh, rig, cfg)
        svgio.write_svg(out_dir / "deviated.svg", [
            (analytic.curves, "analytic", svgio.COLOR_ANALYTIC, 1.5),
            (deviated.curves, "deviated", svgio.COLOR_INK, 1.5),
        ], rig.viewport)
        click.echo(f"wrote {out_dir / 'deviated.svg'}")
    _run(go)


@main.command(name="eval")
@click.argument("checkpoint", metavar="FIELD_CKPT")
@click.argument("mesh_path", metavar="MESH")
@click.argument("camera_path", metavar="CAMERA")
@click.argument("sketch_path", metavar="SKETCH_SVG")
@click.option("--consistency-alpha", type=float, default=None,
              help="radians; run the retrain-at-rotated-view consistency protocol")
@click.pass_context
def eval_cmd(ctx, checkpoint, mesh_path, camera_path, sketch_path, consistency_alpha):
    """Chamfer metrics against a sketch -> metrics.json."""
    def go():
        cfg = _load_config(ctx)
        out_dir = _out(ctx)
        man = ProjectManifest(checkpoint=Path(checkpoint), mesh=Path(mesh_path),
                              camera=Path(camera_path), sketch=Path(sketch_path),
                              out_dir=out_dir)
        man.validate()
        field = DeviationField.load(man.checkpoint)
        mesh = load_obj(man.mesh)
        rig = cameras_mod.load_camera(man.camera)
        strokes, _ = svgio.read_strokes(man.sketch)
        strokes = _prepare_strokes(strokes, cfg.interval_for(rig.viewport))
        sketch_pts = polyline_points(strokes)
        diag = rig.viewport.norm_diagonal

        analytic = render_analytic(mesh, rig, cfg)
        deviated = render_deviated(field, mesh, rig, cfg)
        metrics = {
            "normalizer": diag,
            "chamfer_analytic_vs_sketch": chamfer_l1(
                polyline_points(analytic.curves), sketch_pts, diag),
            "chamfer_deviated_vs_sketch": chamfer_l1(
                polyline_points(deviated.curves), sketch_pts, diag),
            "notes": {"t_junctions": "best-effort snapping; no stroke merge/split"},
        }
        if consistency_alpha is not None:
            metrics["consistency"] = {
                "alpha_rad": consistency_alpha,
                "chamfer": consistency_chamfer(field, mesh, rig, cfg,
                                               consistency_alpha),
            }
        with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=1, sort_keys=True)
            fh.write("\n")
        click.echo(json.dumps(metrics, indent=1, sort_keys=True))
    _run(go)


def consistency_chamfer(field: DeviationField, mesh, rig, cfg,
                        alpha_rad: float) -> float:
    """Cross-view consistency: render the deviated contours at a rotated view,
    learn a fresh field on that synthetic pair, and compare both fields'
    renders at the original view."""
    from .training import make_synthetic_pair

    pair = make_synthetic_pair(field, mesh, rig, math.degrees(alpha_rad), cfg)
    fresh = DeviationField(cfg.field_config(),
                           provenance={"pair": f"consistency@{alpha_rad}", "seed": cfg.seed})
    train([pair], cfg, fresh, stage="consistency")
    base = render_deviated(field, mesh, rig, cfg)
    other = render_deviated(fresh, mesh, rig, cfg)
    return chamfer_l1(polyline_points(base.curves), polyline_points(other.curves),
                      rig.viewport.norm_diagonal)


@main.command()
@click.argument("checkpoint", metavar="FIELD_CKPT")
@click.argument("anchors_path", metavar="ANCHORS_JSON")
@click.argument("sketch_path", metavar="SKETCH_SVG")
@click.argument("matches_path", metavar="MATCHES_JSON")
@click.argument("mesh_path", metavar="MESH")
@click.argument("camera_path", metavar="CAMERA")
@click.pass_context
def augment(ctx, checkpoint, anchors_path, sketch_path, matches_path, mesh_path,
            camera_path):
    """Self-augmentation stages on an existing checkpoint."""
    def go():
        cfg = _load_config(ctx)
        out_dir = _out(ctx)
        stage = ctx.obj.get("stage") or "aug2"
        man = ProjectManifest(checkpoint=Path(checkpoint), anchors=Path(anchors_path),
                              sketch=Path(sketch_path), matches=Path(matches_path),
                              mesh=Path(mesh_path), camera=Path(camera_path),
                              out_dir=out_dir, stage=stage)
        man.validate()
        field = DeviationField.load(man.checkpoint)
        pair = _load_pair(cfg, man.anchors, man.sketch, man.matches, man.camera)
        mesh = load_obj(man.mesh)
        stages = ("aug1",) if stage in ("init", "aug1") else ("aug1", "aug2")
        result = self_augment(field, pair, mesh, cfg, stages=stages)
        ckpt = out_dir / "field_augmented.json"
        field.save(ckpt)
        result.write_log(out_dir / "loss_log_augment.csv")
        click.echo(f"wrote {ckpt}")
    _run(go)


if __name__ == "__main__":
    main()
