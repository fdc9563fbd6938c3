"""The five training loss terms and their weighted combination.

All terms are torch scalars recorded through the deviation field so reverse
mode provides exact parameter gradients.  Geometry-derived constants (analytic
positions, rotations, normals, confidences) are baked into a PairPack up
front; only quantities that depend on the field are recomputed per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .deviation import DeviationField, project_with_field
from .errors import UndefinedLossError
from .geom import AnchoredPolyline, CameraRig
from .matching import MatchSet

_SAFE_NORM_FLOOR = 1e-30
# L1-style residuals below this are treated as exact zeros.  Without the floor
# a perfectly fitted pair sits on the |.| kink: float noise flips the sign
# gradient at full magnitude (amplified by the 1/avg_l normalization) and the
# optimizer random-walks instead of staying put.  The floor shifts loss values
# by at most 1e-9, far below every stated tolerance.
_RESIDUAL_FLOOR = 1e-9


def _dead_l1(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(torch.abs(x) - _RESIDUAL_FLOOR, min=0.0)


@dataclass
class TrainingPair:
    """One contour/sketch pair with correspondences, ready for training."""

    curves: list[AnchoredPolyline]
    strokes: list[AnchoredPolyline]
    rig: CameraRig
    matches: MatchSet
    provenance: str = "artist"


@dataclass
class PairPack:
    rig: CameraRig
    anchors: torch.Tensor      # (N, 3)
    h0: torch.Tensor           # (N, 4) analytic clip coordinates C @ [anchor;1]
    analytic: torch.Tensor     # (N, 2) analytic image positions
    q: torch.Tensor            # (N, 2) matched stroke positions (0 where unmatched)
    alpha: torch.Tensor        # (N,) confidence, 0 where unmatched
    matched: torch.Tensor      # (N,) bool
    avg_l: float               # mean L1 analytic-to-stroke distance + eps
    e_a: torch.Tensor          # (E,) edge tail indices
    e_b: torch.Tensor          # (E,) edge head indices
    normals: torch.Tensor      # (E, 2) analytic unit edge normals
    elen: torch.Tensor         # (E,) analytic edge lengths
    t_i: torch.Tensor          # (T,) triple center
    t_j: torch.Tensor          # (T,) triple reference neighbor
    t_k: torch.Tensor          # (T,) triple target neighbor
    rot: torch.Tensor          # (T, 2, 2) rotation taking analytic (p_j-p_i) to (p_k-p_i)
    ratio: torch.Tensor        # (T,) analytic |p_k-p_i| / |p_j-p_i|
    w_shape: torch.Tensor      # (T,) 1 - min alpha + eps
    provenance: str = ""


def build_pair_pack(pair: TrainingPair, shape_eps: float = 1e-6,
                    data_eps: float = 1e-6) -> PairPack:
    curves = pair.curves
    offsets = np.cumsum([0] + [len(c) for c in curves])
    n_total = offsets[-1]
    anchors = np.vstack([c.anchors for c in curves])
    analytic = np.vstack([c.points for c in curves])

    q = np.zeros((n_total, 2))
    alpha = np.zeros(n_total)
    matched = np.zeros(n_total, dtype=bool)
    curve_pos = {c.source_id: k for k, c in enumerate(curves)}
    stroke_by_id = {s.source_id: s for s in pair.strokes}
    for e in pair.matches.entries:
        if e.curve_id not in curve_pos:
            continue
        g = offsets[curve_pos[e.curve_id]] + e.vertex
        q[g] = stroke_by_id[e.stroke_id].points[e.stroke_vertex]
        alpha[g] = e.alpha
        matched[g] = True

    diffs = np.abs(analytic[matched] - q[matched]).sum(axis=1)
    avg_l = float(diffs.mean()) + data_eps if matched.any() else data_eps

    e_a, e_b = [], []
    t_i, t_j, t_k = [], [], []
    for k, c in enumerate(curves):
        base = offsets[k]
        n = len(c)
        heads = np.arange(n - 1) + 1
        tails = np.arange(n - 1)
        if c.closed:
            heads = np.append(heads, 0)
            tails = np.append(tails, n - 1)
        e_a.append(base + tails)
        e_b.append(base + heads)
        if c.closed:
            centers = np.arange(n)
            prevs = (centers - 1) % n
            nxts = (centers + 1) % n
        else:
            centers = np.arange(1, n - 1)
            prevs = centers - 1
            nxts = centers + 1
        # both ordered neighbor pairs (j, k) and (k, j) per interior vertex
        t_i.append(base + np.concatenate([centers, centers]))
        t_j.append(base + np.concatenate([prevs, nxts]))
        t_k.append(base + np.concatenate([nxts, prevs]))
    e_a = np.concatenate(e_a)
    e_b = np.concatenate(e_b)
    t_i = np.concatenate(t_i) if t_i else np.empty(0, dtype=int)
    t_j = np.concatenate(t_j) if t_j else np.empty(0, dtype=int)
    t_k = np.concatenate(t_k) if t_k else np.empty(0, dtype=int)

    edge_vec = analytic[e_b] - analytic[e_a]
    elen = np.linalg.norm(edge_vec, axis=1)
    keep_e = elen > 1e-12  # zero-length analytic edges are skipped
    e_a, e_b, edge_vec, elen = e_a[keep_e], e_b[keep_e], edge_vec[keep_e], elen[keep_e]
    normals = np.stack([-edge_vec[:, 1], edge_vec[:, 0]], axis=1) / elen[:, None]

    u = analytic[t_j] - analytic[t_i]
    v = analytic[t_k] - analytic[t_i]
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    keep_t = (nu > 1e-12) & (nv > 1e-12)  # coincident analytic neighbors skipped
    t_i, t_j, t_k, u, v, nu, nv = (a[keep_t] for a in (t_i, t_j, t_k, u, v, nu, nv))
    denom = nu * nv
    cos = np.einsum("ij,ij->i", u, v) / denom
    sin = (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / denom
    rot = np.empty((len(t_i), 2, 2))
    rot[:, 0, 0] = cos
    rot[:, 0, 1] = -sin
    rot[:, 1, 0] = sin
    rot[:, 1, 1] = cos
    ratio = nv / nu
    a_min = np.minimum(np.minimum(alpha[t_i], alpha[t_j]), alpha[t_k])
    w_shape = 1.0 - a_min + shape_eps

    tt = lambda a, dtype=torch.float64: torch.as_tensor(a, dtype=dtype)
    h0 = np.concatenate([anchors, np.ones((n_total, 1))], axis=1) @ pair.rig.combined.T
    return PairPack(
        rig=pair.rig,
        anchors=tt(anchors), h0=tt(h0), analytic=tt(analytic), q=tt(q),
        alpha=tt(alpha), matched=torch.as_tensor(matched),
        avg_l=avg_l,
        e_a=tt(e_a, torch.long), e_b=tt(e_b, torch.long),
        normals=tt(normals), elen=tt(elen),
        t_i=tt(t_i, torch.long), t_j=tt(t_j, torch.long), t_k=tt(t_k, torch.long),
        rot=tt(rot), ratio=tt(ratio), w_shape=tt(w_shape),
        provenance=pair.provenance,
    )


# ---------------------------------------------------------------------------
# loss terms (all take deviated projections, so tests can inject transforms)
# ---------------------------------------------------------------------------

def loss_data(pack: PairPack, dev_xy: torch.Tensor) -> torch.Tensor:
    """Confidence-weighted L1 pull toward matched stroke vertices, normalized by
    the average analytic-to-stroke distance."""
    if not bool(pack.matched.any()):
        raise UndefinedLossError("data loss needs at least one match")
    diff = _dead_l1(dev_xy[pack.matched] - pack.q[pack.matched]).sum(dim=1)
    return (pack.alpha[pack.matched] * diff).mean() / pack.avg_l


def loss_shape(pack: PairPack, dev_xy: torch.Tensor) -> torch.Tensor:
    """Penalize non-uniform scale and shear of the two edges at each interior
    vertex, weighted down where match confidence is high."""
    if len(pack.t_i) == 0:
        return torch.zeros((), dtype=torch.float64)
    a = dev_xy[pack.t_j] - dev_xy[pack.t_i]
    b = dev_xy[pack.t_k] - dev_xy[pack.t_i]
    pred = pack.ratio[:, None] * torch.einsum("tij,tj->ti", pack.rot, a)
    res = b - pred
    return (pack.w_shape * (res ** 2).sum(dim=1)).sum()


def loss_slope(pack: PairPack, dev_xy: torch.Tensor) -> torch.Tensor:
    """Mean squared normal component of deviated edges relative to analytic
    edge direction; zero when every edge keeps its slope."""
    if len(pack.e_a) == 0:
        return torch.zeros((), dtype=torch.float64)
    dev_edge = dev_xy[pack.e_b] - dev_xy[pack.e_a]
    comp = (pack.normals * dev_edge).sum(dim=1) / pack.elen
    return (comp ** 2).mean()


def _safe_frobenius(delta: torch.Tensor) -> torch.Tensor:
    # same dead zone as _dead_l1: the norm's gradient is unit-magnitude at any
    # nonzero argument, so a constant-field fixed point would otherwise jitter
    ssq = (delta ** 2).sum(dim=(-2, -1))
    return torch.clamp(torch.sqrt(torch.clamp(ssq, min=_SAFE_NORM_FLOOR))
                       - _RESIDUAL_FLOOR, min=0.0)


def loss_smooth(field: DeviationField, points: torch.Tensor, sigma: float,
                n_pairs: int | None, generator: torch.Generator | None) -> torch.Tensor:
    """Kernel-weighted Frobenius distance between deviation matrices over the
    smoothness sample set.

    With ``n_pairs`` set, ordered point pairs are subsampled uniformly and the
    sum rescaled by (total pairs / sampled pairs), so the estimator's
    expectation equals the full double sum; ``n_pairs=None`` computes it
    exactly (small sets only).
    """
    S = len(points)
    if S < 2:
        return torch.zeros((), dtype=torch.float64)
    inv2s = 1.0 / (2.0 * sigma ** 2)
    total_pairs = S * (S - 1)
    if n_pairs is None or n_pairs >= total_pairs:
        D = field.matrices(points)
        acc = torch.zeros((), dtype=torch.float64)
        block = max(1, 2_000_000 // (S * 16))
        for s0 in range(0, S, block):
            Db = D[s0:s0 + block]
            d2 = ((points[s0:s0 + block, None, :] - points[None, :, :]) ** 2).sum(-1)
            k = torch.exp(-d2 * inv2s)
            k[torch.arange(len(Db)), torch.arange(s0, s0 + len(Db))] = 0.0
            fro = _safe_frobenius(Db[:, None, :, :] - D[None, :, :, :])
            acc = acc + (k * fro).sum()
        return acc / S
    idx_i = torch.randint(S, (n_pairs,), generator=generator)
    idx_j = torch.randint(S - 1, (n_pairs,), generator=generator)
    idx_j = idx_j + (idx_j >= idx_i).long()  # uniform over j != i
    uniq, inverse = torch.unique(torch.cat([idx_i, idx_j]), return_inverse=True)
    D_u = field.matrices(points[uniq])
    D_i = D_u[inverse[:n_pairs]]
    D_j = D_u[inverse[n_pairs:]]
    d2 = ((points[idx_i] - points[idx_j]) ** 2).sum(dim=1)
    k = torch.exp(-d2 * inv2s)
    contrib = (k * _safe_frobenius(D_i - D_j)).sum()
    return contrib * (total_pairs / n_pairs) / S


def loss_depth(pack: PairPack, D: torch.Tensor, n_pairs: int | None,
               generator: torch.Generator | None) -> torch.Tensor:
    """Preserve relative clip-space depth: for sampled anchor pairs (i, j) both
    transformed by D_i, the deviated z difference should match the analytic one.
    Subsampling is rescaled exactly like the smoothness estimator."""
    N = len(pack.anchors)
    if N < 2:
        return torch.zeros((), dtype=torch.float64)
    z0 = pack.h0[:, 2]
    total_pairs = N * (N - 1)
    if n_pairs is None or n_pairs >= total_pairs:
        z_dev = torch.einsum("nk,mk->nm", D[:, 2, :], pack.h0)  # z of D_i C p_j
        diag = torch.diagonal(z_dev)
        res = _dead_l1((diag[:, None] - z_dev) - (z0[:, None] - z0[None, :]))
        return res.sum()  # the i == j diagonal is identically zero
    idx_i = torch.randint(N, (n_pairs,), generator=generator)
    idx_j = torch.randint(N - 1, (n_pairs,), generator=generator)
    idx_j = idx_j + (idx_j >= idx_i).long()
    rows = D[idx_i, 2, :]
    z_ii = (rows * pack.h0[idx_i]).sum(dim=1)
    z_ij = (rows * pack.h0[idx_j]).sum(dim=1)
    res = _dead_l1((z_ii - z_ij) - (z0[idx_i] - z0[idx_j]))
    return res.sum() * (total_pairs / n_pairs)


def build_smoothness_points(packs: list[PairPack], grid_res: int) -> torch.Tensor:
    """All contour anchors of every pair plus a dense grid over [-1, 1]^3."""
    axes = torch.linspace(-1.0, 1.0, grid_res, dtype=torch.float64)
    gx, gy, gz = torch.meshgrid(axes, axes, axes, indexing="ij")
    grid = torch.stack([gx, gy, gz], dim=-1).reshape(-1, 3)
    return torch.cat([p.anchors for p in packs] + [grid], dim=0)


def total_loss(field: DeviationField, packs: list[PairPack],
               smooth_points: torch.Tensor, cfg, generator: torch.Generator | None):
    """Weighted sum over pairs plus the shared smoothness term.

    Returns (scalar tensor, per-term float dict for logging).
    """
    terms = {"data": 0.0, "shape": 0.0, "slope": 0.0, "smooth": 0.0, "depth": 0.0}
    acc = torch.zeros((), dtype=torch.float64)
    for pack in packs:
        xy, _, _, D = project_with_field(field, pack.rig, pack.anchors)
        ld = loss_data(pack, xy)
        lsh = loss_shape(pack, xy)
        lsl = loss_slope(pack, xy)
        ldp = loss_depth(pack, D, cfg.depth_pairs, generator)
        acc = acc + cfg.w_data * ld + cfg.w_shape * lsh + cfg.w_slope * lsl \
            + cfg.w_depth * ldp
        terms["data"] += float(ld.detach())
        terms["shape"] += float(lsh.detach())
        terms["slope"] += float(lsl.detach())
        terms["depth"] += float(ldp.detach())
    sigma = cfg.smooth_sigma if cfg.smooth_sigma is not None else cfg.sigma1
    lsm = loss_smooth(field, smooth_points, sigma, cfg.smooth_pairs, generator)
    acc = acc + cfg.w_smooth * lsm
    terms["smooth"] = float(lsm.detach())
    terms["total"] = float(acc.detach())
    return acc, terms
