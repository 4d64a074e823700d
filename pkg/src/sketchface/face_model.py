"""Parametric face model: core tensor, blendshapes, rigid pose and projection.

Pinhole convention used everywhere in this package: the camera sits at the
origin looking down +z, and a camera-space point (x, y, z) with z > 0
projects to focal * (x/z, y/z) + principal_point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FaceModelError(ValueError):
    """Invalid model data or mismatched dimensions."""


class ProjectionError(FaceModelError):
    """Point cannot be projected (non-positive depth)."""


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FaceMesh:
    """Triangle mesh with landmark ids, UVs and a derived boundary set.

    vertices: (N,3) float64, triangles: (M,3) int, uvs: (N,2) in [0,1]^2,
    landmark_vertex_ids: ordered 68 vertex ids.
    """
    vertices: np.ndarray
    triangles: np.ndarray
    landmark_vertex_ids: np.ndarray
    uvs: np.ndarray
    boundary_vertices: frozenset = field(default=None)  # derived in __post_init__

    def __post_init__(self):
        v = _readonly(np.asarray(self.vertices, dtype=np.float64))
        t = _readonly(np.asarray(self.triangles, dtype=np.int64))
        lm = _readonly(np.asarray(self.landmark_vertex_ids, dtype=np.int64))
        uv = _readonly(np.asarray(self.uvs, dtype=np.float64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "landmark_vertex_ids", lm)
        object.__setattr__(self, "uvs", uv)
        n = v.shape[0]
        if v.ndim != 2 or v.shape[1] != 3 or not np.isfinite(v).all():
            raise FaceModelError("vertices must be a finite (N,3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise FaceModelError("triangles must be (M,3)")
        if t.size and (t.min() < 0 or t.max() >= n):
            raise FaceModelError("triangle index out of range")
        if uv.shape != (n, 2):
            raise FaceModelError("uvs must be (N,2)")
        if lm.size != np.unique(lm).size or (lm.size and (lm.min() < 0 or lm.max() >= n)):
            raise FaceModelError("landmark ids must be distinct and valid")
        areas = triangle_areas(v, t)
        if (areas < 1e-12).any():
            bad = int(np.argmin(areas))
            raise FaceModelError(f"degenerate triangle {bad} (area {areas[bad]:.3e})")
        edges, counts = _edge_table(t)
        if (counts > 2).any():
            raise FaceModelError("non-manifold edge shared by >2 triangles")
        rim = edges[counts == 1]
        object.__setattr__(self, "boundary_vertices", frozenset(np.unique(rim).tolist()))

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    def with_vertices(self, vertices):
        """Same topology, new vertex positions."""
        return FaceMesh(vertices, self.triangles, self.landmark_vertex_ids, self.uvs)


def triangle_areas(vertices, triangles):
    e1 = vertices[triangles[:, 1]] - vertices[triangles[:, 0]]
    e2 = vertices[triangles[:, 2]] - vertices[triangles[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _edge_table(triangles):
    """Unique undirected edges and their incidence counts."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0, return_counts=True)


@dataclass(frozen=True)
class CoreTensor:
    """Rank-3 model tensor of shape (3*n_vertices, n_identity, n_expression)."""
    data: np.ndarray
    n_vertices: int
    n_identity: int
    n_expression: int
    seed: int

    def __post_init__(self):
        d = _readonly(np.asarray(self.data, dtype=np.float64))
        object.__setattr__(self, "data", d)
        if d.shape != (3 * self.n_vertices, self.n_identity, self.n_expression):
            raise FaceModelError(
                f"core tensor shape {d.shape} does not match "
                f"(3*{self.n_vertices}, {self.n_identity}, {self.n_expression})")
        if not np.isfinite(d).all():
            raise FaceModelError("core tensor has non-finite entries")


@dataclass(frozen=True)
class IdentityCoeffs:
    u: np.ndarray

    def __post_init__(self):
        u = _readonly(np.asarray(self.u, dtype=np.float64))
        object.__setattr__(self, "u", u)
        if u.ndim != 1 or not np.isfinite(u).all():
            raise FaceModelError("identity coefficients must be a finite vector")


@dataclass(frozen=True)
class ExpressionCoeffs:
    """Blendshape weights, length N_B - 1 (the neutral shape carries no weight)."""
    e: np.ndarray

    def __post_init__(self):
        e = _readonly(np.asarray(self.e, dtype=np.float64))
        object.__setattr__(self, "e", e)
        if e.ndim != 1 or not np.isfinite(e).all():
            raise FaceModelError("expression coefficients must be a finite vector")


@dataclass(frozen=True)
class Blendshapes:
    """shapes: (N_B, N, 3); shapes[0] is the neutral face."""
    shapes: np.ndarray

    def __post_init__(self):
        s = _readonly(np.asarray(self.shapes, dtype=np.float64))
        object.__setattr__(self, "shapes", s)
        if s.ndim != 3 or s.shape[2] != 3:
            raise FaceModelError("blendshapes must be (N_B, N, 3)")

    @property
    def n_shapes(self):
        return self.shapes.shape[0]

    @property
    def neutral(self):
        return self.shapes[0]


@dataclass(frozen=True)
class RigidPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _readonly(np.asarray(self.rotation, dtype=np.float64))
        t = _readonly(np.asarray(self.translation, dtype=np.float64))
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if r.shape != (3, 3) or t.shape != (3,):
            raise FaceModelError("pose must have a 3x3 rotation and 3-vector translation")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise FaceModelError("rotation must be orthonormal with determinant +1")

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def invert_points(self, points):
        """R^T (p - t) for an array of points."""
        return (np.asarray(points) - self.translation) @ self.rotation


@dataclass(frozen=True)
class Camera:
    focal: float
    principal_point: np.ndarray
    image_size: tuple

    def __post_init__(self):
        pp = _readonly(np.asarray(self.principal_point, dtype=np.float64))
        object.__setattr__(self, "principal_point", pp)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if not self.focal > 0:
            raise FaceModelError("focal must be positive")
        w, h = self.image_size
        if not (0 <= pp[0] <= w and 0 <= pp[1] <= h):
            raise FaceModelError("principal point outside image bounds")


@dataclass(frozen=True)
class FrameParams:
    frame_index: int
    expression: ExpressionCoeffs
    pose: RigidPose
    displacements: np.ndarray

    def __post_init__(self):
        d = _readonly(np.asarray(self.displacements, dtype=np.float64))
        object.__setattr__(self, "displacements", d)
        if self.frame_index < 0:
            raise FaceModelError("frame_index must be >= 0")
        if d.shape != (68, 2):
            raise FaceModelError("displacements must be (68,2)")


def synthesize_core(seed, n_vertices, n_identity, n_expression, base_mesh):
    """Deterministic synthetic core tensor standing in for a scanned database.

    Slice (:, 0, 0) is the flattened base mesh; every other slice is a
    band-limited random displacement field with amplitude at most 2% of the
    base mesh bounding-box diagonal.
    """
    if base_mesh.n_vertices != n_vertices:
        raise FaceModelError(
            f"base mesh has {base_mesh.n_vertices} vertices, expected {n_vertices}")
    if min(n_identity, n_expression) < 1:
        raise FaceModelError("identity/expression counts must be >= 1")
    rng = np.random.default_rng(seed)
    verts = base_mesh.vertices
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    span = np.where(hi > lo, hi - lo, 1.0)
    unit = (verts - lo) / span  # in [0,1]^3

    data = np.zeros((3 * n_vertices, n_identity, n_expression), dtype=np.float64)
    data[:, 0, 0] = verts.reshape(-1)
    n_harmonics = 4
    for i in range(n_identity):
        for j in range(n_expression):
            if i == 0 and j == 0:
                continue
            fld = np.zeros((n_vertices, 3))
            for _ in range(n_harmonics):
                k = rng.uniform(0.5, 1.5, size=3) * rng.choice([-1.0, 1.0], size=3)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                amp = rng.normal(size=3)
                fld += amp * np.sin(2.0 * np.pi * (unit @ k) + phase)[:, None]
            peak = np.linalg.norm(fld, axis=1).max()
            scale = 0.02 * diag * rng.uniform(0.3, 1.0)
            if peak > 0:
                fld *= scale / peak
            data[:, i, j] = fld.reshape(-1)
    return CoreTensor(data, n_vertices, n_identity, n_expression, int(seed))


def contract(core, u, e):
    """Full bilinear contraction of the core tensor, returned as (N,3) vertices.

    u has length n_identity, e length n_expression.
    """
    u = np.asarray(u, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if u.shape != (core.n_identity,) or e.shape != (core.n_expression,):
        raise FaceModelError("coefficient length mismatch with core tensor")
    flat = np.einsum("vij,i,j->v", core.data, u, e)
    return flat.reshape(core.n_vertices, 3)


def build_blendshapes(core, u):
    """Contract the identity mode: one shape per expression slot (linear in u)."""
    uv = u.u if isinstance(u, IdentityCoeffs) else np.asarray(u, dtype=np.float64)
    if uv.shape != (core.n_identity,):
        raise FaceModelError(
            f"identity vector length {uv.shape[0] if uv.ndim else '?'} != {core.n_identity}")
    flat = np.einsum("vij,i->vj", core.data, uv)  # (3N, N_e)
    shapes = flat.T.reshape(core.n_expression, core.n_vertices, 3)
    return Blendshapes(shapes)


def compose_shape(blendshapes, e):
    """Neutral plus weighted blendshape deltas.

    Returns (shape, expression_offset) with shape = neutral + offset and
    offset = sum_n (b_n - b_0) * e[n-1].
    """
    ev = e.e if isinstance(e, ExpressionCoeffs) else np.asarray(e, dtype=np.float64)
    shapes = blendshapes.shapes
    if ev.shape != (shapes.shape[0] - 1,):
        raise FaceModelError(
            f"expression vector length {ev.shape} != blendshape count - 1")
    deltas = shapes[1:] - shapes[0]
    offset = np.einsum("nvk,n->vk", deltas, ev)
    return shapes[0] + offset, offset


def transform_mesh(shape, pose):
    """Apply the rigid transform v -> R v + t to every vertex."""
    return pose.apply(shape)


def project_points(points, cam):
    """Vectorized pinhole projection of (K,3) camera-space points."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if (z <= 0).any():
        raise ProjectionError("point behind camera (non-positive depth)")
    xy = cam.focal * pts[:, :2] / z[:, None] + cam.principal_point
    return xy[0] if single else xy


def project_landmark(posed_point, cam, displacement=(0.0, 0.0)):
    """Pinhole projection of one posed landmark plus its 2D displacement."""
    return project_points(posed_point, cam) + np.asarray(displacement, dtype=np.float64)


def landmark_positions(mesh, blendshapes, params, cam):
    """Projected 2D positions of the 68 landmarks for one frame."""
    shape, _ = compose_shape(blendshapes, params.expression)
    posed = transform_mesh(shape, params.pose)
    pts = posed[mesh.landmark_vertex_ids]
    return project_points(pts, cam) + params.displacements
