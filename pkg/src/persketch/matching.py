"""Contour-to-stroke correspondence via per-curve Viterbi decoding.

Each contour vertex gets a candidate set of nearby stroke vertices; a hidden
Markov chain over consecutive contour vertices scores vertex compatibility
(position + tangent) and edge consistency (displacement agreement).  Vertices
with empty candidate sets are excluded together with their incident edge
factors, so decoding runs independently on each contiguous run of non-empty
vertices.  A second round resolves stroke vertices claimed by several curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geom import AnchoredPolyline, interior_angles, tangents


@dataclass
class MatchParams:
    sigma1: float = 0.02               # position/tangent kernel width (normalized units)
    sigma2: float = math.pi / 8        # angle kernel width for confidences (radians)
    candidate_radius: float | None = None   # None -> 3*sigma1
    conflict_radius_factor: float = 2.0
    sigma_edge: float | None = None    # consistency kernel override; None -> sigma1

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValueError("kernel widths must be positive")

    @property
    def radius(self) -> float:
        return self.candidate_radius if self.candidate_radius is not None else 3.0 * self.sigma1

    @property
    def edge_sigma(self) -> float:
        return self.sigma_edge if self.sigma_edge is not None else self.sigma1


@dataclass(frozen=True)
class MatchEntry:
    curve_id: str
    vertex: int
    stroke_id: str
    stroke_vertex: int
    sv: float
    alpha: float = 1.0


@dataclass
class MatchSet:
    entries: list[MatchEntry] = field(default_factory=list)
    unmatched: list[tuple[str, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"curve": e.curve_id, "i": e.vertex, "stroke": e.stroke_id,
                 "j": e.stroke_vertex, "sv": e.sv, "alpha": e.alpha}
                for e in self.entries
            ],
            "unmatched": [{"curve": c, "i": i} for c, i in self.unmatched],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchSet":
        return cls(
            entries=[MatchEntry(e["curve"], int(e["i"]), e["stroke"], int(e["j"]),
                                float(e["sv"]), float(e["alpha"]))
                     for e in d["entries"]],
            unmatched=[(u["curve"], int(u["i"])) for u in d["unmatched"]],
        )


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def compatibility(p, q, tangent_p, tangent_q, sigma1: float) -> float:
    """Vertex score: position distance and tangent disagreement share one Gaussian."""
    d_a = float(np.linalg.norm(np.asarray(p) - np.asarray(q)))
    d_t = 1.0 - abs(float(np.dot(tangent_p, tangent_q)))
    return math.exp(-((d_a + d_t) ** 2) / (2.0 * sigma1 ** 2))


def consistency(p_i, p_next, q_i, q_next, sigma: float) -> float:
    """Edge score: contour edge vs matched stroke-vertex displacement."""
    d_p = float(np.linalg.norm(
        (np.asarray(p_next) - np.asarray(p_i)) - (np.asarray(q_next) - np.asarray(q_i))))
    return math.exp(-(d_p ** 2) / (2.0 * sigma ** 2))


# ---------------------------------------------------------------------------
# stroke index
# ---------------------------------------------------------------------------

class StrokeIndex:
    """Flat view of all stroke vertices with tangents, angles, and a KD-tree."""

    def __init__(self, strokes: list[AnchoredPolyline]):
        self.strokes = strokes
        pts, owner, local = [], [], []
        tang, ang = [], []
        for s_pos, s in enumerate(strokes):
            pts.append(s.points)
            owner.append(np.full(len(s), s_pos))
            local.append(np.arange(len(s)))
            tang.append(tangents(s))
            ang.append(interior_angles(s))
        self.points = np.vstack(pts)
        self.owner = np.concatenate(owner)
        self.local = np.concatenate(local)
        self.tangents = np.vstack(tang)
        self.angles = np.concatenate(ang)
        self.tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def stroke_id(self, gid: int) -> str:
        return self.strokes[self.owner[gid]].source_id

    def query(self, p, radius: float, exclude: set[int] | None = None) -> np.ndarray:
        """Global vertex ids within ``radius`` of p, by (stroke, vertex) order."""
        ids = self.tree.query_ball_point(np.asarray(p, dtype=np.float64), radius, p=2.0)
        if exclude:
            ids = [g for g in ids if g not in exclude]
        ids = np.array(sorted(ids), dtype=np.int64)  # global order == (owner, local)
        return ids


def candidate_set(p, strokes: list[AnchoredPolyline], radius: float,
                  index: StrokeIndex | None = None):
    """Stroke vertices within ``radius`` of p, sorted by distance.

    Returns a list of (stroke_id, vertex_index, distance); empty when nothing
    is in range.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if index is None:
        index = StrokeIndex(strokes)
    ids = index.query(p, radius)
    if len(ids) == 0:
        return []
    d = np.linalg.norm(index.points[ids] - np.asarray(p), axis=1)
    order = np.lexsort((index.local[ids], index.owner[ids], d))
    return [(index.stroke_id(g), int(index.local[g]), float(dist))
            for g, dist in zip(ids[order], d[order])]


# ---------------------------------------------------------------------------
# Viterbi decoding
# ---------------------------------------------------------------------------

@dataclass
class CurveMatch:
    """Per-vertex assignment for one curve: global stroke-vertex id or -1."""
    assignment: np.ndarray
    node_log: np.ndarray     # log S^v of the chosen candidate (0 where unmatched)
    log_score: float


def _decode_run(points: np.ndarray, tangs: np.ndarray, cands: list[np.ndarray],
                index: StrokeIndex, params: MatchParams):
    """Viterbi over one contiguous run of vertices with non-empty candidates."""
    inv2s1 = 1.0 / (2.0 * params.sigma1 ** 2)
    inv2se = 1.0 / (2.0 * params.edge_sigma ** 2)

    def node_scores(k):
        ids = cands[k]
        d_a = np.linalg.norm(index.points[ids] - points[k], axis=1)
        d_t = 1.0 - np.abs(index.tangents[ids] @ tangs[k])
        return -((d_a + d_t) ** 2) * inv2s1

    logs = [node_scores(k) for k in range(len(cands))]
    prev = logs[0]
    back: list[np.ndarray] = []
    for k in range(1, len(cands)):
        dp_edge = points[k] - points[k - 1]
        dq = index.points[cands[k]][None, :, :] - index.points[cands[k - 1]][:, None, :]
        trans = -np.sum((dq - dp_edge) ** 2, axis=2) * inv2se
        tot = prev[:, None] + trans
        best_prev = np.argmax(tot, axis=0)  # first max -> lowest (stroke, vertex)
        back.append(best_prev)
        prev = tot[best_prev, np.arange(len(cands[k]))] + logs[k]
    last = int(np.argmax(prev))
    score = float(prev[last])
    choice = [last]
    for bp in reversed(back):
        choice.append(int(bp[choice[-1]]))
    choice.reverse()
    chosen = [int(cands[k][c]) for k, c in enumerate(choice)]
    node_log = np.array([float(logs[k][c]) for k, c in enumerate(choice)])
    return chosen, node_log, score


def viterbi_match(curve: AnchoredPolyline, strokes: list[AnchoredPolyline],
                  params: MatchParams, index: StrokeIndex | None = None,
                  candidates: list[np.ndarray] | None = None) -> CurveMatch:
    """Best per-vertex stroke assignment for one curve.

    ``candidates`` may override the per-vertex candidate id arrays (used by
    conflict resolution); otherwise they come from the radius query.
    """
    if index is None:
        index = StrokeIndex(strokes)
    pts = curve.points
    tangs = tangents(curve)
    n = len(pts)
    if candidates is None:
        candidates = [index.query(p, params.radius) for p in pts]

    assignment = np.full(n, -1, dtype=np.int64)
    node_log = np.zeros(n)
    total = 0.0
    run: list[int] = []
    for k in range(n + 1):
        if k < n and len(candidates[k]) > 0:
            run.append(k)
            continue
        if run:
            chosen, nl, score = _decode_run(
                pts[run], tangs[run], [candidates[r] for r in run], index, params)
            assignment[run] = chosen
            node_log[run] = nl
            total += score
        run = []
    return CurveMatch(assignment, node_log, total)


# ---------------------------------------------------------------------------
# conflict resolution and confidences
# ---------------------------------------------------------------------------

def _conflicted_stroke_vertices(results: dict[int, CurveMatch]) -> dict[int, list[tuple[int, int]]]:
    """stroke vertex gid -> [(curve position, vertex)] when >= 2 curves claim it."""
    claims: dict[int, list[tuple[int, int]]] = {}
    for c_pos, cm in results.items():
        for v, gid in enumerate(cm.assignment):
            if gid >= 0:
                claims.setdefault(int(gid), []).append((c_pos, v))
    return {gid: who for gid, who in claims.items()
            if len({c for c, _ in who}) >= 2}


def resolve_conflicts(curves: list[AnchoredPolyline], strokes: list[AnchoredPolyline],
                      results: dict[int, CurveMatch], index: StrokeIndex,
                      params: MatchParams) -> dict[int, CurveMatch]:
    """Second matching round for stroke vertices claimed by several curves.

    Conflicted curve vertices search again with doubled radius, excluding the
    contested stroke vertices; each then keeps whichever of its two matches has
    the better compatibility, except that only the strongest round-1 claimant
    may hold on to a contested stroke vertex.
    """
    conflicts = _conflicted_stroke_vertices(results)
    if not conflicts:
        return results

    conflicted_by_curve: dict[int, set[int]] = {}
    contested: set[int] = set(conflicts.keys())
    for gid, who in conflicts.items():
        for c_pos, v in who:
            conflicted_by_curve.setdefault(c_pos, set()).add(v)

    wide = params.conflict_radius_factor * params.radius
    round2: dict[int, CurveMatch] = {}
    for c_pos, verts in sorted(conflicted_by_curve.items()):
        curve = curves[c_pos]
        cands = [index.query(p, params.radius) for p in curve.points]
        for v in verts:
            cands[v] = index.query(curve.points[v], wide, exclude=contested)
        round2[c_pos] = viterbi_match(curve, strokes, params, index, candidates=cands)

    resolved = {c: CurveMatch(cm.assignment.copy(), cm.node_log.copy(), cm.log_score)
                for c, cm in results.items()}
    for gid in sorted(conflicts):
        claimants = sorted(conflicts[gid],
                           key=lambda cv: (-results[cv[0]].node_log[cv[1]], cv[0], cv[1]))
        holder_found = False
        for c_pos, v in claimants:
            sv1 = results[c_pos].node_log[v]
            r2 = round2[c_pos]
            sv2 = r2.node_log[v] if r2.assignment[v] >= 0 else -np.inf
            keep_first = sv1 >= sv2 and not holder_found
            if keep_first:
                holder_found = True  # round-1 match stays with the best claimant
            else:
                resolved[c_pos].assignment[v] = r2.assignment[v]
                resolved[c_pos].node_log[v] = r2.node_log[v] if r2.assignment[v] >= 0 else 0.0

    # round-2 reassignments may themselves collide across curves; keep the best
    residual = _conflicted_stroke_vertices(resolved)
    for gid in sorted(residual):
        claimants = sorted(residual[gid],
                           key=lambda cv: (-resolved[cv[0]].node_log[cv[1]], cv[0], cv[1]))
        for c_pos, v in claimants[1:]:
            resolved[c_pos].assignment[v] = -1
            resolved[c_pos].node_log[v] = 0.0
    return resolved


def confidences(curve: AnchoredPolyline, assignment: np.ndarray,
                index: StrokeIndex, sigma2: float) -> np.ndarray:
    """Per-vertex confidence from the interior-angle agreement of the pair.

    Where either side of the pair sits at an open endpoint the angle is
    undefined; such vertices copy the nearest defined neighbor's value along
    the curve, defaulting to 1 when the whole curve has none.
    """
    n = len(curve)
    ang_p = interior_angles(curve)
    alpha = np.full(n, np.nan)
    for v in range(n):
        gid = assignment[v]
        if gid < 0:
            continue
        ap = ang_p[v]
        aq = index.angles[gid]
        if np.isfinite(ap) and np.isfinite(aq):
            alpha[v] = math.exp(-((ap - aq) ** 2) / (2.0 * sigma2 ** 2))
    defined = np.where(np.isfinite(alpha))[0]
    out = np.ones(n)
    for v in range(n):
        if assignment[v] < 0:
            continue
        if np.isfinite(alpha[v]):
            out[v] = alpha[v]
        elif len(defined):
            nearest = defined[np.argmin(np.abs(defined - v))]
            out[v] = alpha[nearest]
    return out


def match_curves(curves: list[AnchoredPolyline], strokes: list[AnchoredPolyline],
                 params: MatchParams) -> MatchSet:
    """Full two-round matching of every curve against the stroke set."""
    index = StrokeIndex(strokes)
    results = {c_pos: viterbi_match(curve, strokes, params, index)
               for c_pos, curve in enumerate(curves)}
    results = resolve_conflicts(curves, strokes, results, index, params)

    out = MatchSet()
    for c_pos, curve in enumerate(curves):
        cm = results[c_pos]
        alpha = confidences(curve, cm.assignment, index, params.sigma2)
        for v in range(len(curve)):
            gid = cm.assignment[v]
            if gid < 0:
                out.unmatched.append((curve.source_id, v))
            else:
                out.entries.append(MatchEntry(
                    curve.source_id, v, index.stroke_id(gid), int(index.local[gid]),
                    sv=math.exp(cm.node_log[v]), alpha=float(alpha[v])))
    return out
