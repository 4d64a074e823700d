"""Synthetic demo assets: a parametric head mesh with 68 landmarks, a core
tensor, per-frame parameters, rendered frames and background tracks.

Everything is deterministic from a seed so bundles regenerate bit-identically.
"""
from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from . import meshio
from .face_model import (Camera, ExpressionCoeffs, FaceMesh, FrameParams,
                         IdentityCoeffs, RigidPose, build_blendshapes,
                         compose_shape, synthesize_core, transform_mesh)
from .render_propagate import FrameImage, Isomap, isomap_size_for, render_face

# iBUG-68 style grouping; inner mouth (60..67) is left non-editable
GROUP_LAYOUT = (
    ("jawline", list(range(0, 17))),
    ("left_eyebrow", list(range(17, 22))),
    ("right_eyebrow", list(range(22, 27))),
    ("nose_bridge", list(range(27, 31))),
    ("nose_base", list(range(31, 36))),
    ("left_upper_eyelid", [36, 37, 38, 39]),
    ("left_lower_eyelid", [40, 41]),
    ("right_upper_eyelid", [42, 43, 44, 45]),
    ("right_lower_eyelid", [46, 47]),
    ("upper_lip", list(range(48, 55))),
    ("lower_lip", list(range(55, 60))),
)

RELATION_PAIRS = (
    ("left_upper_eyelid", "left_lower_eyelid"),
    ("right_upper_eyelid", "right_lower_eyelid"),
    ("upper_lip", "lower_lip"),
    ("left_eyebrow", "left_upper_eyelid"),
    ("right_eyebrow", "right_upper_eyelid"),
)


def make_head_mesh(nu=52, nv=40):
    """Open face-mask mesh on an ellipsoid patch, front toward -z.

    The rim (largest angles) is the mesh boundary; gentle bumps suggest nose,
    eye sockets and lips so the landmark curves sit on real relief.
    """
    theta = np.linspace(-1.1, 1.1, nu)   # azimuth, radians
    phi = np.linspace(-1.2, 1.2, nv)     # elevation
    tt, pp = np.meshgrid(theta, phi)
    a, b, c = 0.55, 0.75, 0.5            # half-axes (model units)
    x = a * np.sin(tt) * np.cos(pp)
    y = b * np.sin(pp)
    z = -c * np.cos(tt) * np.cos(pp)

    def bump(cx, cy, sx, sy, amp):
        return amp * np.exp(-(((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))

    z = z - bump(0.0, -0.05, 0.10, 0.16, 0.16)            # nose
    z = z + bump(-0.22, 0.18, 0.12, 0.07, 0.05)           # eye sockets
    z = z + bump(0.22, 0.18, 0.12, 0.07, 0.05)
    z = z - bump(0.0, -0.42, 0.22, 0.10, 0.05)            # lips

    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    tris = []
    for j in range(nv - 1):
        for i in range(nu - 1):
            p0 = j * nu + i
            p1 = p0 + 1
            p2 = p0 + nu
            p3 = p2 + 1
            tris.append([p0, p3, p1])
            tris.append([p0, p2, p3])
    uvs = np.stack([tt.ravel(), pp.ravel()], axis=1)
    uvs = (uvs - uvs.min(axis=0)) / (uvs.max(axis=0) - uvs.min(axis=0))
    uvs = 0.02 + 0.96 * uvs
    landmarks = _landmark_ids(verts, nu, nv)
    return FaceMesh(verts, np.array(tris), landmarks, uvs)


def _landmark_ids(verts, nu, nv):
    """Snap 68 semantic (x, y) anchor positions to nearest mesh vertices."""
    anchors = []

    def arc(n, x0, x1, y_of_x):
        xs = np.linspace(x0, x1, n)
        return [(xv, y_of_x(xv)) for xv in xs]

    # 0-16 jawline: lower face contour
    anchors += arc(17, -0.48, 0.48, lambda xv: -0.62 + 0.55 * (abs(xv / 0.48)) ** 1.7)
    # 17-21 left brow, 22-26 right brow
    anchors += arc(5, -0.34, -0.10, lambda xv: 0.30 - 0.6 * (xv + 0.22) ** 2)
    anchors += arc(5, 0.10, 0.34, lambda xv: 0.30 - 0.6 * (xv - 0.22) ** 2)
    # 27-30 nose bridge (top to tip), 31-35 nose base
    anchors += [(0.0, yv) for yv in np.linspace(0.16, -0.10, 4)]
    anchors += arc(5, -0.10, 0.10, lambda xv: -0.20)
    # 36-39 left upper eyelid, 40-41 left lower
    anchors += arc(4, -0.32, -0.12, lambda xv: 0.20 - 1.2 * (xv + 0.22) ** 2)
    anchors += arc(2, -0.27, -0.17, lambda xv: 0.12 + 0.8 * (xv + 0.22) ** 2)
    # 42-45 right upper eyelid, 46-47 right lower
    anchors += arc(4, 0.12, 0.32, lambda xv: 0.20 - 1.2 * (xv - 0.22) ** 2)
    anchors += arc(2, 0.17, 0.27, lambda xv: 0.12 + 0.8 * (xv - 0.22) ** 2)
    # 48-54 upper lip, 55-59 lower lip
    anchors += arc(7, -0.20, 0.20, lambda xv: -0.36 - 0.03 * (xv / 0.20) ** 2)
    anchors += arc(5, 0.14, -0.14, lambda xv: -0.50 + 0.02 * (xv / 0.14) ** 2)
    # 60-67 inner mouth ring
    anchors += arc(5, -0.12, 0.12, lambda xv: -0.41)
    anchors += arc(3, 0.08, -0.08, lambda xv: -0.45)

    ids = []
    taken = set()
    for ax, ay in anchors:
        d = (verts[:, 0] - ax) ** 2 + (verts[:, 1] - ay) ** 2
        order = np.argsort(d)
        for vid in order:
            if int(vid) not in taken:
                ids.append(int(vid))
                taken.add(int(vid))
                break
    assert len(ids) == 68
    return np.array(ids, dtype=np.int64)


def landmark_groups_spec():
    return {
        "groups": [{"name": n, "landmark_indices": idx} for n, idx in GROUP_LAYOUT],
        "relation_pairs": [list(p) for p in RELATION_PAIRS],
        "boost_factor": 2.0,
    }


def procedural_texture(size, seed):
    """Smooth skin-like UV texture (low frequency keeps resampling faithful)."""
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    base = np.stack([
        0.78 + 0.10 * np.sin(2.1 * np.pi * u) * np.cos(1.3 * np.pi * v),
        0.60 + 0.08 * np.cos(1.7 * np.pi * (u + v)),
        0.50 + 0.06 * np.sin(1.1 * np.pi * v),
    ], axis=2)
    for _ in range(6):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        s = rng.uniform(0.08, 0.25)
        tint = rng.uniform(-0.08, 0.08, 3)
        base += tint * np.exp(-(((u - cx) / s) ** 2 + ((v - cy) / s) ** 2))[:, :, None]
    return np.clip(base, 0.0, 1.0).astype(np.float32)


def make_background(width, height, seed):
    rng = np.random.default_rng(seed)
    xx, yy = np.meshgrid(np.linspace(0, 1, width), np.linspace(0, 1, height))
    img = np.stack([
        0.25 + 0.35 * xx,
        0.30 + 0.25 * yy,
        0.45 + 0.20 * (1 - xx) * yy,
    ], axis=2)
    for _ in range(10):
        cx, cy = rng.uniform(0, 1, 2)
        s = rng.uniform(0.03, 0.12)
        tint = rng.uniform(-0.25, 0.25, 3)
        img += tint * np.exp(-(((xx - cx) / s) ** 2 + ((yy - cy) / s) ** 2))[:, :, None]
    return np.clip(img, 0.0, 1.0)


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def demo_pose(frame, n_frames):
    """Gentle yaw/pitch sway around a frontal pose at depth 4."""
    ph = 2.0 * np.pi * frame / max(n_frames, 1)
    yaw = np.deg2rad(6.0) * np.sin(ph)
    pitch = np.deg2rad(3.0) * np.sin(2.0 * ph + 0.7)
    r = _rot_x(pitch) @ _rot_y(yaw)
    t = np.array([0.0, 0.02 * np.sin(ph), 4.0 + 0.05 * np.cos(ph)])
    return RigidPose(r, t)


def generate_bundle(path, n_frames=30, width=640, height=360, seed=7,
                    n_identity=8, n_expression=6):
    """Write a complete session bundle directory and return its path."""
    os.makedirs(path, exist_ok=True)
    os.makedirs(os.path.join(path, "frames"), exist_ok=True)
    rng = np.random.default_rng(seed)

    mesh = make_head_mesh()
    core = synthesize_core(seed, mesh.n_vertices, n_identity, n_expression, mesh)
    u = np.zeros(n_identity)
    u[0] = 1.0
    u[1:] = rng.uniform(-0.08, 0.08, n_identity - 1)
    u /= max(np.linalg.norm(u), 1.0)
    identity = IdentityCoeffs(u)
    shapes = build_blendshapes(core, identity)

    cam = Camera(focal=0.9 * height, principal_point=(width / 2.0, height / 2.0),
                 image_size=(width, height))
    size = isomap_size_for(height)
    texture = Isomap(procedural_texture(size, seed + 1),
                     np.ones((size, size), dtype=bool))
    background = make_background(width, height, seed + 2)
    bg_u8 = FrameImage(np.clip(np.rint(background * 255.0), 0, 255).astype(np.uint8))

    params = []
    tracks = []
    margin_pts = np.array([
        [24.0, 24.0], [width - 24.0, 24.0], [24.0, height - 24.0],
        [width - 24.0, height - 24.0], [width / 2.0, 16.0], [width / 2.0, height - 16.0],
        [16.0, height / 2.0], [width - 16.0, height / 2.0],
    ])
    ring_angles = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)

    for f in range(n_frames):
        e = ExpressionCoeffs(rng.uniform(-0.06, 0.06, n_expression - 1))
        pose = demo_pose(f, n_frames)
        disp = rng.uniform(-0.4, 0.4, (68, 2))
        params.append(FrameParams(f, e, pose, disp))

        shape, _ = compose_shape(shapes, e)
        posed = transform_mesh(shape, pose)
        frame_img, _, _ = render_face(bg_u8, posed, mesh, cam, texture)
        Image.fromarray(frame_img.pixels).save(
            os.path.join(path, "frames", f"{f:06d}.png"))

        center = np.array([width / 2.0, height / 2.0])
        radius = 0.36 * height
        ring = center + radius * np.stack(
            [np.cos(ring_angles + 0.05 * f), np.sin(ring_angles + 0.05 * f)], axis=1)
        src = np.vstack([margin_pts, ring])
        wobble = 1.2 * np.stack(
            [np.sin(ring_angles + 0.21 * f), np.cos(ring_angles + 0.17 * f)], axis=1)
        dst = np.vstack([margin_pts, ring + wobble])
        tracks.append({"src": src.tolist(), "dst": dst.tolist()})

    meshio.save_obj(os.path.join(path, "mesh.obj"), mesh)
    meshio.save_core(os.path.join(path, "core.fctn"), core)
    meta = {
        "camera": {"focal": cam.focal, "principal_point": list(cam.principal_point),
                   "image_size": [width, height]},
        "fps": 25.0,
        "frame_count": n_frames,
        "isomap_size": size,
        "identity_coeffs": u.tolist(),
        "seed": seed,
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    with open(os.path.join(path, "params.json"), "w") as fh:
        json.dump({"frames": [
            {"frame_index": p.frame_index,
             "expression": p.expression.e.tolist(),
             "rotation": p.pose.rotation.tolist(),
             "translation": p.pose.translation.tolist(),
             "displacements": p.displacements.tolist()} for p in params]}, fh)
    with open(os.path.join(path, "tracks.json"), "w") as fh:
        json.dump({"frames": tracks}, fh)
    with open(os.path.join(path, "groups.json"), "w") as fh:
        json.dump(landmark_groups_spec(), fh, indent=1)
    return path
