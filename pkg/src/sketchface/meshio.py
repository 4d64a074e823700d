"""File formats: triangulated OBJ subset (v/vt/f) and the FCTN core-tensor binary.

FCTN layout, little-endian: magic b"FCTN", four u32 dims
(3*n_vertices, n_vertices, n_identity, n_expression), u64 seed, then f64
entries in C order for shape (3*n_vertices, n_identity, n_expression).
"""
from __future__ import annotations

import struct

import numpy as np

from .face_model import CoreTensor, FaceMesh, FaceModelError

_MAGIC = b"FCTN"


def save_obj(path, mesh):
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for uv in mesh.uvs:
        lines.append(f"vt {uv[0]:.17g} {uv[1]:.17g}")
    lm = " ".join(str(int(i)) for i in mesh.landmark_vertex_ids)
    lines.append(f"# landmarks {lm}")
    for t in mesh.triangles:
        a, b, c = (int(i) + 1 for i in t)
        lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path, landmark_vertex_ids=None):
    """Parse the v/vt/f subset. Landmark ids come from the '# landmarks' comment
    written by save_obj unless given explicitly."""
    verts, uvs, tris = [], [], []
    landmarks = landmark_vertex_ids
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FaceModelError(f"non-triangular face in {path}: {line.strip()}")
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
            elif parts[0] == "#" and len(parts) > 1 and parts[1] == "landmarks" and landmarks is None:
                landmarks = [int(x) for x in parts[2:]]
    if not verts or not tris:
        raise FaceModelError(f"no geometry in {path}")
    if not uvs:
        uvs = np.zeros((len(verts), 2))
    if landmarks is None:
        landmarks = []
    return FaceMesh(np.array(verts), np.array(tris), np.array(landmarks, dtype=np.int64),
                    np.array(uvs))


def save_core(path, core):
    header = _MAGIC + struct.pack(
        "<4IQ", 3 * core.n_vertices, core.n_vertices, core.n_identity,
        core.n_expression, core.seed & (2**64 - 1))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(core.data, dtype="<f8").tobytes())


def load_core(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise FaceModelError(f"{path}: bad magic {magic!r}, expected FCTN")
        d0, nv, nu, ne, seed = struct.unpack("<4IQ", fh.read(24))
        if d0 != 3 * nv:
            raise FaceModelError(f"{path}: first dim {d0} != 3*{nv}")
        data = np.frombuffer(fh.read(8 * d0 * nu * ne), dtype="<f8")
        if data.size != d0 * nu * ne:
            raise FaceModelError(f"{path}: truncated tensor payload")
    return CoreTensor(data.reshape(d0, nu, ne).copy(), nv, nu, ne, seed)
