"""Training configuration, the optimization loop, and self-augmentation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np
import torch

from .deviation import DeviationField, FieldConfig
from .errors import EmptyContourError, PersketchError, TrainingDivergedError
from .geom import CameraRig, Viewport, rotate_object
from .losses import (PairPack, TrainingPair, build_pair_pack,
                     build_smoothness_points, total_loss)
from .matching import MatchEntry, MatchParams, MatchSet

log = logging.getLogger(__name__)

VERTICAL_AXIS = np.array([0.0, 1.0, 0.0])


def _default_stage1() -> list[int]:
    return [d for d in range(-5, 6) if d != 0]


def _default_stage2() -> list[int]:
    return [d for d in range(-10, 11) if d != 0]


@dataclass
class TrainConfig:
    # loss weights
    w_data: float = 0.001
    w_shape: float = 10.0
    w_slope: float = 1.0
    w_smooth: float = 1.0
    w_depth: float = 1e-5
    # kernel widths and guards
    sigma1: float = 0.02
    sigma2: float = math.pi / 8
    sigma_edge: float | None = None
    smooth_sigma: float | None = None   # None -> sigma1
    data_eps: float = 1e-6
    shape_eps: float = 1e-6
    # sampling
    sample_interval: float | None = None  # None -> 0.005 x image diagonal
    smooth_grid_res: int = 9
    smooth_pairs: int | None = 4096
    depth_pairs: int | None = 4096
    # optimizer
    lr: float = 1e-3
    lr_schedule: str = "cosine"         # decay to lr/100; "constant" disables
    iters_init: int = 2000
    iters_aug: int = 1000
    converge_tol: float = 1e-12         # stop early once the total loss is this small
    optimizer: str = "adam"             # "sgd" gives the fixed-step sanity mode
    frozen_subsample: bool = False      # reuse one pair subsample every iteration
    # augmentation schedules (degrees around the vertical axis)
    aug_stage1: list[int] = dc_field(default_factory=_default_stage1)
    aug_stage2: list[int] = dc_field(default_factory=_default_stage2)
    retrain_from_scratch: bool = False
    # matching
    candidate_radius: float | None = None
    conflict_radius_factor: float = 2.0
    # contours
    sharp_angle_deg: float = 60.0
    include_hidden: bool = False
    snap_t_junctions: bool = True
    # field architecture
    hidden_layers: int = 4
    hidden_width: int = 128
    activation: str = "tanh"
    posenc: int = 0
    # reproducibility
    seed: int = 0
    deterministic: bool = False

    def interval_for(self, viewport: Viewport) -> float:
        if self.sample_interval is not None:
            return self.sample_interval
        return 0.005 * viewport.norm_diagonal

    def match_params(self) -> MatchParams:
        return MatchParams(sigma1=self.sigma1, sigma2=self.sigma2,
                           candidate_radius=self.candidate_radius,
                           conflict_radius_factor=self.conflict_radius_factor,
                           sigma_edge=self.sigma_edge)

    def field_config(self) -> FieldConfig:
        return FieldConfig(hidden_layers=self.hidden_layers,
                           hidden_width=self.hidden_width,
                           activation=self.activation,
                           posenc=self.posenc, seed=self.seed)

    def sharp_angle(self) -> float:
        return math.radians(self.sharp_angle_deg)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise PersketchError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        text = open(path, "rb").read()
        if str(path).endswith(".toml"):
            try:
                import tomllib  # py >= 3.11
            except ImportError:
                import tomli as tomllib
            data = tomllib.loads(text.decode("utf-8"))
        else:
            data = json.loads(text.decode("utf-8"))
        return cls.from_dict(data)


@dataclass
class TrainResult:
    field: DeviationField
    history: list[dict]

    def write_log(self, path) -> None:
        cols = ["iteration", "data", "shape", "slope", "smooth", "depth", "total"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.history:
                writer.writerow({c: row[c] for c in cols})


def train(pairs: list[TrainingPair], cfg: TrainConfig, field: DeviationField,
          iterations: int | None = None, stage: str = "init") -> TrainResult:
    """Minimize the weighted loss summed over pairs.

    Deterministic under a fixed seed in single-threaded mode.  Raises
    TrainingDivergedError (carrying the last finite term values) if the loss
    leaves the finite range; the field then still holds the last good state.
    """
    if not pairs:
        raise PersketchError("no training pairs")
    iterations = cfg.iters_init if iterations is None else iterations
    packs = [build_pair_pack(p, cfg.shape_eps, cfg.data_eps) for p in pairs]
    smooth_points = build_smoothness_points(packs, cfg.smooth_grid_res)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    frozen_gen_state = gen.get_state() if cfg.frozen_subsample else None

    params = field.parameters()
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=cfg.lr)
    elif cfg.optimizer == "sgd":
        opt = torch.optim.SGD(params, lr=cfg.lr)
    else:
        raise PersketchError(f"unknown optimizer {cfg.optimizer!r}")

    history: list[dict] = []
    snapshot = [p.detach().clone() for p in params]
    for it in range(iterations):
        if cfg.lr_schedule == "cosine" and iterations > 1:
            # decay to lr/100 so the L1 terms' step-size limit cycle dies out
            frac = it / (iterations - 1)
            lr_t = cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + math.cos(math.pi * frac)))
            for group in opt.param_groups:
                group["lr"] = lr_t
        if frozen_gen_state is not None:
            gen.set_state(frozen_gen_state)
        opt.zero_grad()
        loss, terms = total_loss(field, packs, smooth_points, cfg, gen)
        if not math.isfinite(terms["total"]):
            field.load_state(snapshot)
            raise TrainingDivergedError(it, terms)
        history.append({"iteration": it, **terms, "stage": stage})
        if terms["total"] <= cfg.converge_tol:
            # already at a numerical optimum; stepping would only let the
            # adaptive optimizer jitter around it
            break
        if it % 50 == 0:
            snapshot = [p.detach().clone() for p in params]
        loss.backward()
        opt.step()
    field.provenance.setdefault("stages", []).append(
        {"stage": stage, "iterations": iterations,
         "pairs": [p.provenance for p in pairs]})
    return TrainResult(field, history)


# ---------------------------------------------------------------------------
# self-augmentation
# ---------------------------------------------------------------------------

def make_synthetic_pair(field: DeviationField, mesh, rig: CameraRig,
                        theta_deg: float, cfg: TrainConfig) -> TrainingPair:
    """Rotate the object, render its contours analytically and through the
    current field, and pair them with identity matches at full confidence.

    Regularization drops samples that are hidden in deviated space from both
    sides, so the sample-k-to-sample-k correspondence stays exact.
    """
    from .inference import regularized_keep_masks, render_analytic

    rig_r = rotate_object(rig, VERTICAL_AXIS, math.radians(theta_deg))
    cset = render_analytic(mesh, rig_r, cfg)
    keep = regularized_keep_masks(cset, mesh, rig_r, field)

    curves, strokes, matches = [], [], MatchSet()
    for k, (curve, _) in enumerate(cset):
        sel = keep[k]
        if sel.sum() < 2:
            continue
        closed = curve.closed and bool(sel.all())
        cid = f"aug{theta_deg:+g}-c{k}"
        sid = f"aug{theta_deg:+g}-s{k}"
        curves.append(type(curve)(curve.points[sel], curve.anchors[sel],
                                  closed=closed, source_id=cid))
        dev_pts = field.apply(rig_r, curve.anchors[sel])
        strokes.append(type(curve)(dev_pts, None, closed=closed, source_id=sid))
        for v in range(int(sel.sum())):
            matches.entries.append(MatchEntry(cid, v, sid, v, sv=1.0, alpha=1.0))
    if not curves:
        raise EmptyContourError(f"no usable contours at rotation {theta_deg}")
    return TrainingPair(curves, strokes, rig_r, matches,
                        provenance=f"synthetic@{theta_deg:+g}deg")


def _stage_pairs(field, base_pair, mesh, cfg, degrees):
    pairs = [base_pair]
    for theta in degrees:
        try:
            pairs.append(make_synthetic_pair(field, mesh, base_pair.rig, theta, cfg))
        except EmptyContourError as exc:
            log.warning("skipping augmentation angle %s: %s", theta, exc)
    return pairs


def self_augment(field: DeviationField, base_pair: TrainingPair, mesh,
                 cfg: TrainConfig, stages: tuple[str, ...] = ("aug1", "aug2")
                 ) -> TrainResult:
    """Two-stage fine-tuning on synthetic rotated pairs generated by the
    current field (stage 1: +-5 degrees, stage 2: +-10 degrees by default)."""
    history: list[dict] = []
    for stage in stages:
        degrees = cfg.aug_stage1 if stage == "aug1" else cfg.aug_stage2
        pairs = _stage_pairs(field, base_pair, mesh, cfg, degrees)
        if cfg.retrain_from_scratch:
            field.reinitialize()
        result = train(pairs, cfg, field, iterations=cfg.iters_aug, stage=stage)
        history.extend(result.history)
    return TrainResult(field, history)
