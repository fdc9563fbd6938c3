"""Shared helpers for the test suite (fixtures builders, FD oracle)."""

import numpy as np
import torch

from persketch import cameras
from persketch.deviation import DeviationField
from persketch.geom import (AnchoredPolyline, Viewport, clip_coords,
                            perspective_divide, tangents)
from persketch.inference import render_analytic
from persketch.losses import TrainingPair
from persketch.matching import StrokeIndex, match_curves
from persketch.shapes import cube
from persketch.training import TrainConfig

VP = Viewport(1024, 1024)


def three_quarter_rig(vp=VP):
    return cameras.pinhole_rig([2.4, 1.9, 2.9], [0, 0, 0], [0, 1, 0], 40.0, vp)


def cube_pair(cfg: TrainConfig | None = None, deviate=None, rig=None,
              mesh=None) -> TrainingPair:
    """A cube contour set matched against (optionally deviated) copies of
    itself.  ``deviate`` maps anchors (n,3) to per-point 4x4 matrices."""
    cfg = cfg or TrainConfig()
    rig = rig or three_quarter_rig()
    mesh = mesh if mesh is not None else cube()
    cset = render_analytic(mesh, rig, cfg)
    strokes = []
    for k, c in enumerate(cset.curves):
        if deviate is None:
            pts = c.points
        else:
            h = clip_coords(c.anchors, rig, deviate(c.anchors))
            pts = perspective_divide(h) * rig.viewport.aspect_scale()
        strokes.append(AnchoredPolyline(pts, None, c.closed, f"sk{k}"))
    ms = match_curves(cset.curves, strokes, cfg.match_params())
    return TrainingPair(cset.curves, strokes, rig, ms, provenance="test")


def linear_x_scale(amplitude: float):
    """x-scale deviation varying linearly with the anchor's x coordinate."""
    def deviate(anchors):
        D = np.tile(np.eye(4), (len(anchors), 1, 1))
        D[:, 0, 0] = 1.0 + amplitude * anchors[:, 0]
        return D
    return deviate


def relative_grad_error(analytic, fd):
    num = np.sqrt(sum(float(((a - f) ** 2).sum()) for a, f in zip(analytic, fd)))
    den = np.sqrt(sum(float((f ** 2).sum()) for f in fd))
    return num / max(den, 1e-12)


def finite_difference_grads(field: DeviationField, loss_fn, h: float = 1e-4):
    """Central finite differences over every field parameter.

    ``loss_fn`` must rebuild the computation (including any RNG use from a
    fixed seed) on every call so perturbed evaluations are comparable.
    """
    params = field.parameters()
    analytic = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    analytic = [torch.zeros_like(p) if g is None else g.detach()
                for p, g in zip(params, analytic)]
    fd = []
    for p in params:
        g = torch.zeros_like(p)
        flat = p.detach().reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.numel()):
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + h
            lp = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = orig - h
            lm = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = orig
            gflat[idx] = (lp - lm) / (2.0 * h)
        fd.append(g)
    return analytic, fd


def brute_force_log_best(curve, strokes, params, index=None):
    """Exhaustive maximization over every candidate assignment (vectorized
    tensor sum over the product space), independent of the DP decoder."""
    if index is None:
        index = StrokeIndex(strokes)
    pts = curve.points
    tangs = tangents(curve)
    cands = [index.query(p, params.radius) for p in pts]
    inv1 = 1.0 / (2 * params.sigma1 ** 2)
    inve = 1.0 / (2 * params.edge_sigma ** 2)

    total = 0.0
    run = []
    for k in range(len(pts) + 1):
        if k < len(pts) and len(cands[k]) > 0:
            run.append(k)
            continue
        if run:
            shape = [len(cands[r]) for r in run]
            table = np.zeros(shape)
            for a, r in enumerate(run):
                ids = cands[r]
                d_a = np.linalg.norm(index.points[ids] - pts[r], axis=1)
                d_t = 1.0 - np.abs(index.tangents[ids] @ tangs[r])
                node = -((d_a + d_t) ** 2) * inv1
                table += node.reshape([shape[a] if j == a else 1
                                       for j in range(len(shape))])
            for a in range(len(run) - 1):
                r0, r1 = run[a], run[a + 1]
                dq = index.points[cands[r1]][None, :, :] - index.points[cands[r0]][:, None, :]
                trans = -np.sum((dq - (pts[r1] - pts[r0])) ** 2, axis=2) * inve
                sh = [1] * len(shape)
                sh[a], sh[a + 1] = shape[a], shape[a + 1]
                table += trans.reshape(sh)
            total += table.max()
        run = []
    return total
