"""Maps ordered hand-drawn strokes to landmark groups with an HMM.

Groups are the hidden states, strokes the observations. Emission is a
Gaussian on the stroke-to-group key-point distance, gated to exactly zero
past 3 sigma; transitions between groups with a strong semantic relation are
boosted and rows renormalized. Strokes with zero emission everywhere are
rejected and break the chain (decoding restarts after them).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SketchMappingError(ValueError):
    pass


@dataclass(frozen=True)
class Stroke:
    """Ordered 2D polyline in pixels plus its draw-order index."""
    points: np.ndarray
    order_index: int

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 2:
            raise SketchMappingError("stroke needs at least two 2D points")
        if not np.isfinite(p).all():
            raise SketchMappingError("stroke has non-finite coordinates")
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        if (seg == 0).any():
            raise SketchMappingError("stroke has repeated consecutive points")


@dataclass(frozen=True)
class LandmarkGroup:
    name: str
    landmark_indices: tuple
    current_points: np.ndarray

    def __post_init__(self):
        idx = tuple(int(i) for i in self.landmark_indices)
        pts = np.asarray(self.current_points, dtype=np.float64)
        pts.setflags(write=False)
        object.__setattr__(self, "landmark_indices", idx)
        object.__setattr__(self, "current_points", pts)
        if len(idx) < 2 or len(set(idx)) != len(idx):
            raise SketchMappingError(f"group {self.name}: needs >=2 distinct landmarks")
        if pts.shape != (len(idx), 2):
            raise SketchMappingError(f"group {self.name}: point/index count mismatch")

    def __len__(self):
        return len(self.landmark_indices)


@dataclass(frozen=True)
class HmmConfig:
    sigma: float
    relation_pairs: frozenset = frozenset()
    boost_factor: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "relation_pairs",
                           frozenset(frozenset(p) for p in self.relation_pairs))
        if not self.sigma > 0:
            raise SketchMappingError("sigma must be positive")
        if self.boost_factor < 1:
            raise SketchMappingError("boost_factor must be >= 1")


@dataclass(frozen=True)
class MappingResult:
    """assignments: (stroke order_index, group name) pairs in stroke order.
    rejected: order indices excluded as invalid. superseded: order indices
    whose group was re-drawn by a later stroke (last one wins downstream)."""
    assignments: tuple
    rejected: tuple
    superseded: tuple = ()


def arc_lengths(points):
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_stroke(stroke, m):
    """m key points at uniform arc-length spacing; endpoints preserved."""
    if m < 2:
        raise SketchMappingError("need at least 2 key points")
    pts = stroke.points if isinstance(stroke, Stroke) else np.asarray(stroke, dtype=np.float64)
    s = arc_lengths(pts)
    total = s[-1]
    if total <= 0:
        raise SketchMappingError("zero-length stroke")
    targets = np.linspace(0.0, total, m)
    idx = np.searchsorted(s, targets, side="right") - 1
    idx = np.clip(idx, 0, len(pts) - 2)
    seg_len = s[idx + 1] - s[idx]
    frac = (targets - s[idx]) / seg_len
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def stroke_group_distance(stroke, group):
    """Mean key-point distance, minimized over the two stroke orientations."""
    k = len(group)
    kp = resample_stroke(stroke, k)
    d_fwd = np.linalg.norm(kp - group.current_points, axis=1).mean()
    d_rev = np.linalg.norm(kp[::-1] - group.current_points, axis=1).mean()
    return min(d_fwd, d_rev)


def emission_prob(stroke, group, cfg):
    """exp(-d^2 / 2 sigma^2) inside the 3-sigma gate, exactly 0 outside."""
    d = stroke_group_distance(stroke, group)
    if d > 3.0 * cfg.sigma:
        return 0.0
    return math.exp(-(d * d) / (2.0 * cfg.sigma * cfg.sigma))


def transition_matrix(groups, cfg):
    """Uniform base transitions with related pairs boosted, rows renormalized."""
    n = len(groups)
    a = np.ones((n, n), dtype=np.float64)
    names = [g.name for g in groups]
    for i in range(n):
        for j in range(n):
            if i != j and frozenset((names[i], names[j])) in cfg.relation_pairs:
                a[i, j] = cfg.boost_factor
    return a / a.sum(axis=1, keepdims=True)


def _decode_segment(log_em, log_a, log_pi):
    """Max-probability state sequence for one unbroken run of strokes.

    Ties break toward the lowest group index, applied from the last stroke
    backward (smallest final state, then smallest predecessor).
    """
    t_len, n = log_em.shape
    delta = np.empty((t_len, n))
    psi = np.zeros((t_len, n), dtype=np.int64)
    delta[0] = log_pi + log_em[0]
    for t in range(1, t_len):
        for j in range(n):
            cand = delta[t - 1] + log_a[:, j]
            best = int(np.argmax(cand))  # argmax returns the first (lowest) maximizer
            psi[t, j] = best
            delta[t, j] = cand[best] + log_em[t, j]
    path = np.empty(t_len, dtype=np.int64)
    path[-1] = int(np.argmax(delta[-1]))
    for t in range(t_len - 2, -1, -1):
        path[t] = psi[t + 1, path[t + 1]]
    return path


def viterbi_map(strokes, groups, cfg):
    """Assign each stroke to a group (or reject it) by Viterbi decoding."""
    if not strokes or not groups:
        raise SketchMappingError("need at least one stroke and one group")
    ordered = sorted(strokes, key=lambda s: s.order_index)
    n = len(groups)
    em = np.array([[emission_prob(s, g, cfg) for g in groups] for s in ordered])

    rejected = [s.order_index for s, row in zip(ordered, em) if (row == 0.0).all()]
    keep = [i for i, row in enumerate(em) if not (row == 0.0).all()]

    log_a = np.log(transition_matrix(groups, cfg))
    log_pi = np.full(n, -np.log(n))
    assignments = []
    # decode each maximal run between chain breaks independently
    run = []
    runs = []
    for i in keep:
        if run and i != run[-1] + 1:
            runs.append(run)
            run = []
        run.append(i)
    if run:
        runs.append(run)
    with np.errstate(divide="ignore"):
        for run in runs:
            log_em = np.log(em[run])
            path = _decode_segment(log_em, log_a, log_pi)
            for i, gi in zip(run, path):
                assignments.append((ordered[i].order_index, groups[gi].name))

    seen_last = {}
    for order, name in assignments:
        seen_last[name] = order
    superseded = tuple(order for order, name in assignments if seen_last[name] != order)
    return MappingResult(tuple(assignments), tuple(rejected), superseded)
