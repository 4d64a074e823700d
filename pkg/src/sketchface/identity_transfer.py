"""Transfers 2D landmark edits onto the 3D identity mesh.

Pipeline: back-project each modified 2D landmark at the original landmark's
depth, undo the rigid pose, subtract the frame's expression offset, then
solve a sparse linear least-squares problem over the free vertices:

    E = w_s * smoothness(adjacent deformation gradients similar)
      + w_r * regularization(deformation gradients near identity)
      + w_l * landmark(constrained vertices near their targets)

subject to boundary vertices fixed at their source positions (eliminated,
not penalized). Deformation gradients Q_i = Vhat_i V_i^{-1} use the
normal-derived fourth vertex; the deformed matrix keeps the source normal
column so Q_i stays linear in the unknown vertices.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .face_model import Camera, FaceMesh, FaceModelError, RigidPose

DENSE_SOLVE_LIMIT = 50_000  # free vertices; above this fall back to CG


class TransferError(ValueError):
    pass


class SingularTransferError(TransferError):
    """The constrained system is rank deficient; reported, never regularized."""


@dataclass(frozen=True)
class LandmarkConstraint:
    vertex_id: int
    target: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target, dtype=np.float64)
        t.setflags(write=False)
        object.__setattr__(self, "target", t)
        if t.shape != (3,) or not np.isfinite(t).all():
            raise TransferError("constraint target must be a finite 3-vector")
        if self.vertex_id < 0:
            raise TransferError("invalid vertex id")


@dataclass(frozen=True)
class TransferWeights:
    w_s: float = 1.0
    w_r: float = 0.1
    w_l: float = 1.0

    def __post_init__(self):
        if min(self.w_s, self.w_r, self.w_l) < 0 or max(self.w_s, self.w_r, self.w_l) == 0:
            raise TransferError("weights must be non-negative and not all zero")


DEFAULT_WEIGHTS = TransferWeights(1.0, 0.1, 1.0)
# refinement stage: smoothness and regularization doubled against drastic edits
REFINE_WEIGHTS = TransferWeights(2.0, 0.5, 1.0)


@dataclass(frozen=True)
class TransferProblem:
    source_identity: FaceMesh
    constraints: tuple
    weights: TransferWeights
    boundary: frozenset
    adjacency: tuple  # adjacency[i] = ids of edge-adjacent triangles of triangle i

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "boundary", frozenset(int(b) for b in self.boundary))
        object.__setattr__(self, "adjacency", tuple(tuple(a) for a in self.adjacency))
        n = self.source_identity.n_vertices
        ids = [c.vertex_id for c in self.constraints]
        if any(i >= n for i in ids):
            raise TransferError("constraint vertex id out of range")
        if self.boundary & set(ids):
            raise TransferError("boundary and constrained vertex sets must be disjoint")
        for i, adj in enumerate(self.adjacency):
            for j in adj:
                if i not in self.adjacency[j]:
                    raise TransferError("adjacency must be symmetric")


def triangle_adjacency(mesh):
    """Edge-adjacent triangle ids per triangle."""
    edge_owner = {}
    adj = [set() for _ in range(mesh.triangles.shape[0])]
    for t, tri in enumerate(mesh.triangles):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            if key in edge_owner:
                o = edge_owner[key]
                adj[o].add(t)
                adj[t].add(o)
            else:
                edge_owner[key] = t
    return tuple(tuple(sorted(s)) for s in adj)


def make_transfer_problem(mesh, constraints, weights=DEFAULT_WEIGHTS, boundary=None):
    if boundary is None:
        boundary = mesh.boundary_vertices
    return TransferProblem(mesh, tuple(constraints), weights, frozenset(boundary),
                           triangle_adjacency(mesh))


def estimate_modified_landmark_3d(modified_2d, original_vertex_posed, cam):
    """Back-project a modified 2D landmark at the original landmark's depth."""
    z = float(original_vertex_posed[2])
    if z <= 0:
        raise TransferError("original landmark has non-positive depth")
    m = np.asarray(modified_2d, dtype=np.float64)
    xy = (m - cam.principal_point) * z / cam.focal
    return np.array([xy[0], xy[1], z])


def to_identity_target(camera_point, pose, expression_offset_at_vertex):
    """Undo the rigid pose, then remove the expression contribution."""
    p = np.asarray(camera_point, dtype=np.float64)
    neutral = pose.rotation.T @ (p - pose.translation)
    return neutral - np.asarray(expression_offset_at_vertex, dtype=np.float64)


def _fourth_vertex_column(v1, v2, v3):
    c = np.cross(v2 - v1, v3 - v1)
    nrm = np.linalg.norm(c)
    if nrm * 0.5 < 1e-12:
        raise TransferError("degenerate triangle in vertex-matrix construction")
    return c / np.sqrt(nrm)


def build_vertex_matrix(tri_vertices):
    """Columns (v2-v1, v3-v1, v4-v1) with the normal-derived fourth vertex."""
    v1, v2, v3 = (np.asarray(p, dtype=np.float64) for p in tri_vertices)
    return np.column_stack([v2 - v1, v3 - v1, _fourth_vertex_column(v1, v2, v3)])


def _vertex_matrices(verts, tris):
    """Batch vertex matrices, their inverses and normal columns."""
    v1 = verts[tris[:, 0]]
    e1 = verts[tris[:, 1]] - v1
    e2 = verts[tris[:, 2]] - v1
    cr = np.cross(e1, e2)
    nrm = np.linalg.norm(cr, axis=1)
    if (0.5 * nrm < 1e-12).any():
        raise TransferError("degenerate source triangle")
    ncol = cr / np.sqrt(nrm)[:, None]
    mats = np.stack([e1, e2, ncol], axis=2)  # columns
    return np.linalg.inv(mats), ncol


def _gradient_rows(tris, inv_mats):
    """COO pieces for rows sqrt_w * Q_i[., c], one row per (triangle, c).

    Row order: triangle-major, c fastest. Returns (rows, cols, vals) covering
    the linear part (vertex unknowns); the constant normal-column part goes
    to the RHS by the caller.
    """
    m = tris.shape[0]
    row_ids = np.arange(3 * m)
    coef1 = -(inv_mats[:, 0, :] + inv_mats[:, 1, :])  # (M,3) over c
    coef2 = inv_mats[:, 0, :]
    coef3 = inv_mats[:, 1, :]
    rows = np.concatenate([row_ids, row_ids, row_ids])
    cols = np.concatenate([np.repeat(tris[:, 0], 3),
                           np.repeat(tris[:, 1], 3),
                           np.repeat(tris[:, 2], 3)])
    vals = np.concatenate([coef1.ravel(), coef2.ravel(), coef3.ravel()])
    return rows, cols, vals


def _assemble(problem):
    """Sparse LS matrix over all vertices plus per-coordinate RHS.

    Rows are pre-scaled by sqrt(weight); boundary columns are eliminated into
    the RHS afterwards. Returns (A_free, rhs (rows,3), free_index, n_free).
    """
    mesh = problem.source_identity
    verts = mesh.vertices
    tris = mesh.triangles
    n = mesh.n_vertices
    m = tris.shape[0]
    w = problem.weights

    inv_mats, ncols = _vertex_matrices(verts, tris)
    # constant part of Q_i[., c]: ncols[t, rc] * inv_mats[t, 2, c], as (t, c, rc)
    const_q = np.einsum("tr,tc->tcr", ncols, inv_mats[:, 2, :])

    blocks = []
    rhs_parts = []
    offset = 0

    if w.w_r > 0:
        s = np.sqrt(w.w_r)
        r, c, v = _gradient_rows(tris, inv_mats)
        blocks.append((r + offset, c, s * v))
        rhs_parts.append(s * (np.eye(3)[None, :, :] - const_q).reshape(3 * m, 3))
        offset += 3 * m

    pairs = np.array([(i, j) for i, adj in enumerate(problem.adjacency)
                      for j in adj if j > i], dtype=np.int64).reshape(-1, 2)
    if w.w_s > 0 and len(pairs):
        s = np.sqrt(w.w_s)
        ri, ci, vi = _gradient_rows(tris[pairs[:, 0]], inv_mats[pairs[:, 0]])
        rj, cj, vj = _gradient_rows(tris[pairs[:, 1]], inv_mats[pairs[:, 1]])
        blocks.append((ri + offset, ci, s * vi))
        blocks.append((rj + offset, cj, -s * vj))
        rhs_parts.append(
            s * (const_q[pairs[:, 1]] - const_q[pairs[:, 0]]).reshape(3 * len(pairs), 3))
        offset += 3 * len(pairs)

    if w.w_l > 0 and problem.constraints:
        s = np.sqrt(w.w_l)
        ids = np.array([con.vertex_id for con in problem.constraints], dtype=np.int64)
        targets = np.array([con.target for con in problem.constraints])
        blocks.append((offset + np.arange(len(ids)), ids, np.full(len(ids), s)))
        rhs_parts.append(s * targets)
        offset += len(ids)

    rows = np.concatenate([b[0] for b in blocks])
    cols = np.concatenate([b[1] for b in blocks])
    vals = np.concatenate([b[2] for b in blocks])
    a_full = sp.coo_matrix((vals, (rows, cols)), shape=(offset, n)).tocsc()
    rhs = np.vstack(rhs_parts) if rhs_parts else np.zeros((0, 3))

    boundary_ids = np.array(sorted(problem.boundary), dtype=np.int64)
    free_mask = np.ones(n, dtype=bool)
    free_mask[boundary_ids] = False
    free_ids = np.nonzero(free_mask)[0]
    free_index = np.full(n, -1, dtype=np.int64)
    free_index[free_ids] = np.arange(free_ids.size)

    if boundary_ids.size:
        rhs = rhs - a_full[:, boundary_ids] @ verts[boundary_ids]
    a_free = a_full[:, free_ids].tocsr()
    return a_free, rhs, free_index, free_ids.size


def transfer_identity(problem):
    """Solve for the modified identity mesh."""
    mesh = problem.source_identity
    a, rhs, free_index, n_free = _assemble(problem)

    out = mesh.vertices.copy()
    if n_free == 0:
        return mesh.with_vertices(out)

    ata = (a.T @ a).tocsc()
    atb = a.T @ rhs  # (n_free, 3)
    try:
        if n_free <= DENSE_SOLVE_LIMIT:
            lu = spla.splu(ata)
            diag = np.abs(lu.U.diagonal())
            if diag.min() < 1e-10 * max(diag.max(), 1e-300):
                raise SingularTransferError(
                    f"transfer system is rank deficient (pivot ratio "
                    f"{diag.min() / diag.max():.2e})")
            x = np.column_stack([lu.solve(atb[:, k]) for k in range(3)])
        else:
            x = np.column_stack([
                spla.cg(ata, atb[:, k], rtol=1e-10, maxiter=20 * n_free)[0]
                for k in range(3)])
    except RuntimeError as exc:
        raise SingularTransferError(f"transfer system is singular: {exc}") from exc
    if not np.isfinite(x).all():
        raise SingularTransferError("transfer system is singular (non-finite solution)")
    resid = np.linalg.norm(ata @ x - atb)
    scale = max(np.linalg.norm(atb), 1e-30)
    if resid / scale > 1e-6:
        raise SingularTransferError(
            f"normal equations unsolved (relative residual {resid / scale:.2e})")

    free_mask = free_index >= 0
    out[free_mask] = x[free_index[free_mask]]
    return mesh.with_vertices(out)
