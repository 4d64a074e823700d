"""Contour-map rendering of the identity mesh and redrawn-line constraints.

Occluding contours are mesh edges whose adjacent face normals straddle the
view direction; shape boundaries are rim edges; the outline subset of the
visible chains is additionally emitted as the exterior silhouette. Redrawn
lines inside an erased region become landmark constraints for a re-solve
with boosted smoothness/regularization weights.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .face_model import project_points
from .identity_transfer import LandmarkConstraint
from .landmark_deform import DeformConfig, deform_group
from .sketch_mapping import LandmarkGroup, Stroke, arc_lengths

MIN_OPEN_CHAIN_EDGES = 5    # open chains shorter than this are noise
SILHOUETTE_RADIUS = 1.5     # px distance to background that marks the outline


class ContourError(ValueError):
    pass


@dataclass(frozen=True)
class ContourPolyline:
    label: str  # exterior_silhouette | occluding_contour | shape_boundary
    points: np.ndarray        # (K,2) px
    depths: np.ndarray        # (K,) camera-space z
    vertex_ids: np.ndarray    # (K,) source mesh vertices
    source_points: np.ndarray  # (K,3) model-space positions
    closed: bool = False

    def __post_init__(self):
        for name in ("points", "depths", "vertex_ids", "source_points"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if (self.depths <= 0).any():
            raise ContourError("contour depths must be positive")


@dataclass(frozen=True)
class ContourMap:
    view: object   # RigidPose
    camera: object
    polylines: tuple

    def to_json(self):
        return {
            "polylines": [
                {
                    "label": p.label,
                    "closed": bool(p.closed),
                    "points": p.points.tolist(),
                    "depths": p.depths.tolist(),
                    "vertex_ids": p.vertex_ids.tolist(),
                }
                for p in self.polylines
            ]
        }


@dataclass(frozen=True)
class RefineEdit:
    erased_region: np.ndarray   # (K,2) polygon, pixels
    replacement_stroke: Stroke

    def __post_init__(self):
        r = np.asarray(self.erased_region, dtype=np.float64)
        r.setflags(write=False)
        object.__setattr__(self, "erased_region", r)
        if r.ndim != 2 or r.shape[1] != 2 or r.shape[0] < 3:
            raise ContourError("erased region must be a polygon with >=3 vertices")


def points_in_polygon(points, polygon):
    """Even-odd rule containment test, vectorized over points."""
    x = points[:, 0]
    y = points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    px = polygon[:, 0]
    py = polygon[:, 1]
    j = len(polygon) - 1
    for i in range(len(polygon)):
        cond = ((py[i] > y) != (py[j] > y))
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (px[j] - px[i]) * (y - py[i]) / (py[j] - py[i]) + px[i]
        inside ^= cond & (x < xint)
        j = i
    return inside


def _edge_map(triangles):
    edges = {}
    for t, tri in enumerate(triangles):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            edges.setdefault(key, []).append(t)
    return edges


def _chains_from_edges(edge_list):
    """Split an edge set into open chains and closed loops of vertex ids."""
    adj = {}
    for a, b in edge_list:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    unused = {tuple(sorted(e)) for e in edge_list}

    def take(a, b):
        unused.discard((a, b) if a < b else (b, a))

    chains = []
    # open chains start at vertices with degree != 2
    starts = [v for v, nb in adj.items() if len(nb) != 2]
    for s in starts:
        for nb in sorted(adj[s]):
            key = (s, nb) if s < nb else (nb, s)
            if key not in unused:
                continue
            path = [s, nb]
            take(s, nb)
            cur, prev = nb, s
            while len(adj[cur]) == 2:
                nxt = next(iter(adj[cur] - {prev}))
                key = (cur, nxt) if cur < nxt else (nxt, cur)
                if key not in unused:
                    break
                take(cur, nxt)
                path.append(nxt)
                prev, cur = cur, nxt
            chains.append((path, False))
    # remaining edges form closed loops
    while unused:
        a, b = next(iter(unused))
        path = [a, b]
        take(a, b)
        prev, cur = a, b
        while True:
            candidates = [v for v in sorted(adj[cur] - {prev})
                          if ((cur, v) if cur < v else (v, cur)) in unused]
            if not candidates:
                break
            nxt = candidates[0]
            take(cur, nxt)
            if nxt == path[0]:
                break
            path.append(nxt)
            prev, cur = cur, nxt
        chains.append((path, True))
    return chains


def render_contours(mesh, view, cam):
    """Contour map of the mesh from a viewpoint, with per-point source records."""
    cam_verts = view.apply(mesh.vertices)
    if (cam_verts[:, 2] <= 0).any():
        raise ContourError("vertex behind camera")
    xy = project_points(cam_verts, cam)
    tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)

    e1 = cam_verts[tris[:, 1]] - cam_verts[tris[:, 0]]
    e2 = cam_verts[tris[:, 2]] - cam_verts[tris[:, 0]]
    normals = np.cross(e1, e2)

    boundary_edges = []
    occluding_edges = []
    for (a, b), owners in _edge_map(tris).items():
        if len(owners) == 1:
            boundary_edges.append((a, b))
        else:
            mid = 0.5 * (cam_verts[a] + cam_verts[b])
            sa = float(normals[owners[0]] @ mid)
            sb = float(normals[owners[1]] @ mid)
            if sa * sb < 0:
                occluding_edges.append((a, b))

    w, h = cam.image_size
    depth_buf, tri_id, _ = kernels.rasterize_triangles(
        xy, np.ascontiguousarray(cam_verts[:, 2]), tris, w, h)
    coverage = tri_id >= 0
    # grazing contour points sit steps of ~an edge above the z-buffer surface
    mean_edge = float(np.linalg.norm(
        cam_verts[tris[:, 0]] - cam_verts[tris[:, 1]], axis=1).mean())
    bias = 0.5 * mean_edge + 1e-9

    def visible(vid):
        px, py = xy[vid]
        xi, yi = int(px), int(py)
        if not (0 <= xi < w and 0 <= yi < h):
            return False
        return cam_verts[vid, 2] <= depth_buf[yi, xi] + bias

    vis = np.array([visible(v) for v in range(mesh.n_vertices)])

    def near_background(vid):
        px, py = xy[vid]
        r = int(np.ceil(SILHOUETTE_RADIUS))
        x0, x1 = int(px) - r, int(px) + r + 1
        y0, y1 = int(py) - r, int(py) + r + 1
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            return True
        return not coverage[y0:y1, x0:x1].all()

    polylines = []

    def emit(edge_list, label):
        kept = [(a, b) for a, b in edge_list if vis[a] and vis[b]]
        for path, closed in _chains_from_edges(kept):
            n_edges = len(path) if closed else len(path) - 1
            if not closed and n_edges < MIN_OPEN_CHAIN_EDGES:
                continue
            ids = np.array(path, dtype=np.int64)
            polylines.append(ContourPolyline(
                label, xy[ids], cam_verts[ids, 2], ids, mesh.vertices[ids], closed))
            # outline sub-runs double as the exterior silhouette
            if label == "exterior_silhouette":
                continue
            outline = np.array([near_background(v) for v in path])
            runs = _true_runs(outline)
            for lo, hi in runs:
                if hi - lo < 2:
                    continue
                sub = ids[lo:hi]
                polylines.append(ContourPolyline(
                    "exterior_silhouette", xy[sub], cam_verts[sub, 2], sub,
                    mesh.vertices[sub], bool(closed and hi - lo == len(path))))

    emit(occluding_edges, "occluding_contour")
    emit(boundary_edges, "shape_boundary")
    return ContourMap(view, cam, tuple(polylines))


def _true_runs(mask):
    """[lo, hi) index ranges of consecutive True entries."""
    runs = []
    lo = None
    for i, v in enumerate(mask):
        if v and lo is None:
            lo = i
        elif not v and lo is not None:
            runs.append((lo, i))
            lo = None
    if lo is not None:
        runs.append((lo, len(mask)))
    return runs


def resample_at_fractions(points, fractions):
    """Sample a polyline at given arc-length fractions (0..1)."""
    pts = np.asarray(points, dtype=np.float64)
    s = arc_lengths(pts)
    total = s[-1]
    if total <= 0:
        raise ContourError("zero-length polyline")
    targets = np.asarray(fractions) * total
    idx = np.clip(np.searchsorted(s, targets, side="right") - 1, 0, len(pts) - 2)
    seg = s[idx + 1] - s[idx]
    frac = (targets - s[idx]) / seg
    return pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])


def refine_constraints(contour_map, edit, mesh, deform_cfg=None):
    """Turn a redrawn contour line into identity-space landmark constraints.

    The longest erased sub-polyline is the source group; the replacement
    stroke, sampled at the erased run's own arc-length fractions, is fitted
    with the landmark-deformation energy; fitted points are back-projected at
    the erased points' depths and snapped to the nearest source vertices.
    """
    best = None
    for p in contour_map.polylines:
        if p.label == "exterior_silhouette":
            continue  # duplicates of occluding/boundary chains
        inside = points_in_polygon(p.points, edit.erased_region)
        for lo, hi in _true_runs(inside):
            if hi - lo >= 2 and (best is None or hi - lo > best[2] - best[1]):
                best = (p, lo, hi)
    if best is None:
        warnings.warn("erased region overlaps no contour polyline", stacklevel=2)
        return []
    poly, lo, hi = best
    erased_pts = poly.points[lo:hi]
    erased_depths = poly.depths[lo:hi]

    s = arc_lengths(erased_pts)
    fracs = s / s[-1]
    fwd = resample_at_fractions(edit.replacement_stroke.points, fracs)
    rev = resample_at_fractions(edit.replacement_stroke.points[::-1], fracs)
    d_fwd = np.linalg.norm(fwd - erased_pts, axis=1).mean()
    d_rev = np.linalg.norm(rev - erased_pts, axis=1).mean()
    keypoints = fwd if d_fwd <= d_rev else rev

    group = LandmarkGroup("refine_line", tuple(range(len(erased_pts))), erased_pts)
    fitted = deform_group(group, keypoints, deform_cfg or DeformConfig()).points

    cam = contour_map.camera
    xy = (fitted - cam.principal_point) * erased_depths[:, None] / cam.focal
    cam_pts = np.column_stack([xy, erased_depths])
    model_pts = contour_map.view.invert_points(cam_pts)

    edge_lens = np.linalg.norm(
        mesh.vertices[mesh.triangles[:, 0]] - mesh.vertices[mesh.triangles[:, 1]], axis=1)
    reject_radius = 2.0 * float(edge_lens.mean())
    chosen = {}
    for k, target in enumerate(model_pts):
        d = np.linalg.norm(mesh.vertices - target, axis=1)
        vid = int(np.argmin(d))
        if d[vid] > reject_radius or vid in mesh.boundary_vertices:
            continue
        if vid not in chosen or d[vid] < chosen[vid][0]:
            chosen[vid] = (float(d[vid]), target)
    return [LandmarkConstraint(vid, tgt) for vid, (_, tgt) in sorted(chosen.items())]
