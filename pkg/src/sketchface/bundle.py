"""Session bundle: the on-disk package replacing live face tracking.

Directory layout: meta.json, frames/%06d.png, params.json, tracks.json,
mesh.obj, core.fctn, groups.json. Loading validates cross-file consistency
and reports field-level diagnostics.
"""
from __future__ import annotations

import json
import os
from functools import cached_property

import numpy as np
from PIL import Image

from . import meshio
from .face_model import (Camera, ExpressionCoeffs, FrameParams, IdentityCoeffs,
                         RigidPose, build_blendshapes, compose_shape,
                         landmark_positions, project_points, transform_mesh)
from .render_propagate import FrameImage
from .sketch_mapping import HmmConfig, LandmarkGroup


class BundleError(ValueError):
    pass


def _load_json(path, name):
    if not os.path.exists(path):
        raise BundleError(f"missing bundle file: {name}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise BundleError(f"{name}: invalid JSON ({exc})") from exc


class SessionBundle:
    def __init__(self, path):
        self.path = os.path.abspath(path)
        meta = _load_json(os.path.join(path, "meta.json"), "meta.json")
        for key in ("camera", "fps", "frame_count"):
            if key not in meta:
                raise BundleError(f"meta.json: missing field '{key}'")
        cam = meta["camera"]
        self.camera = Camera(float(cam["focal"]), np.array(cam["principal_point"]),
                             tuple(cam["image_size"]))
        self.fps = float(meta["fps"])
        self.frame_count = int(meta["frame_count"])
        self.isomap_size = int(meta.get("isomap_size", 256))
        if "identity_coeffs" not in meta:
            raise BundleError("meta.json: missing field 'identity_coeffs'")
        self.identity_coeffs = IdentityCoeffs(np.array(meta["identity_coeffs"]))

        mesh_path = os.path.join(path, "mesh.obj")
        if not os.path.exists(mesh_path):
            raise BundleError("missing bundle file: mesh.obj")
        self.mesh = meshio.load_obj(mesh_path)
        if self.mesh.landmark_vertex_ids.size != 68:
            raise BundleError(
                f"mesh.obj: expected 68 landmark ids, found {self.mesh.landmark_vertex_ids.size}")

        core_path = os.path.join(path, "core.fctn")
        if not os.path.exists(core_path):
            raise BundleError("missing bundle file: core.fctn")
        self.core = meshio.load_core(core_path)
        if self.core.n_vertices != self.mesh.n_vertices:
            raise BundleError(
                f"core.fctn: {self.core.n_vertices} vertices vs mesh {self.mesh.n_vertices}")
        if self.identity_coeffs.u.size != self.core.n_identity:
            raise BundleError(
                f"meta.json: identity_coeffs length {self.identity_coeffs.u.size} "
                f"!= core n_identity {self.core.n_identity}")

        pdata = _load_json(os.path.join(path, "params.json"), "params.json")
        frames = pdata.get("frames")
        if frames is None:
            raise BundleError("params.json: missing 'frames' list")
        if len(frames) != self.frame_count:
            raise BundleError(
                f"frame count mismatch: meta.json says {self.frame_count}, "
                f"params.json has {len(frames)}")
        self.params = []
        for k, p in enumerate(frames):
            try:
                self.params.append(FrameParams(
                    int(p["frame_index"]),
                    ExpressionCoeffs(np.array(p["expression"])),
                    RigidPose(np.array(p["rotation"]), np.array(p["translation"])),
                    np.array(p["displacements"])))
            except (KeyError, ValueError) as exc:
                raise BundleError(f"params.json: frame {k}: {exc}") from exc
            if self.params[-1].expression.e.size != self.core.n_expression - 1:
                raise BundleError(
                    f"params.json: frame {k}: expression length "
                    f"{self.params[-1].expression.e.size} != {self.core.n_expression - 1}")

        tdata = _load_json(os.path.join(path, "tracks.json"), "tracks.json")
        tframes = tdata.get("frames")
        if tframes is None or len(tframes) != self.frame_count:
            raise BundleError(
                f"tracks.json: expected {self.frame_count} frame entries, "
                f"found {0 if tframes is None else len(tframes)}")
        self.tracks = [(np.array(t["src"], dtype=np.float64),
                        np.array(t["dst"], dtype=np.float64)) for t in tframes]
        for k, (src, dst) in enumerate(self.tracks):
            if src.shape != dst.shape or src.shape[0] < 3:
                raise BundleError(f"tracks.json: frame {k}: need >=3 src/dst pairs")

        gdata = _load_json(os.path.join(path, "groups.json"), "groups.json")
        self.group_specs = [(g["name"], tuple(int(i) for i in g["landmark_indices"]))
                            for g in gdata.get("groups", [])]
        if not self.group_specs:
            raise BundleError("groups.json: no landmark groups")
        covered = [i for _, idx in self.group_specs for i in idx]
        if len(covered) != len(set(covered)):
            raise BundleError("groups.json: groups must not share landmark indices")
        self.relation_pairs = frozenset(
            frozenset(p) for p in gdata.get("relation_pairs", []))
        self.boost_factor = float(gdata.get("boost_factor", 2.0))

        frames_dir = os.path.join(path, "frames")
        n_png = len([f for f in os.listdir(frames_dir)]) if os.path.isdir(frames_dir) else 0
        if n_png != self.frame_count:
            raise BundleError(
                f"frame count mismatch: meta.json says {self.frame_count}, "
                f"frames/ holds {n_png} files")

    @cached_property
    def blendshapes(self):
        return build_blendshapes(self.core, self.identity_coeffs)

    def frame_path(self, t):
        return os.path.join(self.path, "frames", f"{t:06d}.png")

    def load_frame(self, t):
        if not (0 <= t < self.frame_count):
            raise BundleError(f"frame {t} out of range 0..{self.frame_count - 1}")
        return FrameImage(np.asarray(Image.open(self.frame_path(t)).convert("RGB")))

    def landmarks_2d(self, t):
        """Projected 68 landmarks for frame t (Eq. 2 semantics)."""
        return landmark_positions(self.mesh, self.blendshapes, self.params[t], self.camera)

    def composed_shape(self, t, identity_vertices=None):
        """(shape, offset) for frame t; identity_vertices overrides the neutral."""
        shape, offset = compose_shape(self.blendshapes, self.params[t].expression)
        if identity_vertices is not None:
            shape = identity_vertices + offset
        return shape, offset

    def posed_vertices(self, t, identity_vertices=None):
        shape, _ = self.composed_shape(t, identity_vertices)
        return transform_mesh(shape, self.params[t].pose)

    def groups_for_frame(self, t):
        """LandmarkGroup objects with current 2D points for frame t."""
        lm = self.landmarks_2d(t)
        return [LandmarkGroup(name, idx, lm[list(idx)]) for name, idx in self.group_specs]

    def hmm_config(self, t):
        """Sigma defaults to 5% of the landmark bounding-box diagonal."""
        lm = self.landmarks_2d(t)
        diag = float(np.linalg.norm(lm.max(axis=0) - lm.min(axis=0)))
        return HmmConfig(sigma=0.05 * diag, relation_pairs=self.relation_pairs,
                         boost_factor=self.boost_factor)

    def face_bbox_diag(self, t):
        lm = self.landmarks_2d(t)
        return float(np.linalg.norm(lm.max(axis=0) - lm.min(axis=0)))

    def landmark_depths(self, t, identity_vertices=None):
        posed = self.posed_vertices(t, identity_vertices)
        return posed[self.mesh.landmark_vertex_ids, 2]

    def project(self, points):
        return project_points(points, self.camera)
