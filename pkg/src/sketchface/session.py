"""Editing session: strokes in, modified identity out, with refinement and
propagation. State survives restarts (serialized after every mutating call).
"""
from __future__ import annotations

import json
import os
import threading
import uuid

import numpy as np

from .bundle import SessionBundle
from .contour_refine import RefineEdit, refine_constraints, render_contours
from .face_model import RigidPose
from .identity_transfer import (DEFAULT_WEIGHTS, REFINE_WEIGHTS,
                                LandmarkConstraint, estimate_modified_landmark_3d,
                                make_transfer_problem, to_identity_target,
                                transfer_identity)
from .landmark_deform import DeformConfig, deform_group
from .render_propagate import propagate
from .sketch_mapping import Stroke, resample_stroke, viterbi_map


class SessionError(ValueError):
    pass


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


class Session:
    """One edit session over a bundle. Mutating calls are serialized by the
    service; the session itself is single-threaded."""

    def __init__(self, bundle_path, state_dir, session_id=None):
        self.id = session_id or uuid.uuid4().hex[:12]
        self.bundle = SessionBundle(bundle_path)
        self.state_dir = state_dir
        self.edit_frame = 0
        self.mapping = None            # last MappingResult as plain dict
        self.deformed = {}             # group name -> fitted 2D points (list)
        self.identity_vertices = None  # modified identity, (N,3) or None
        self.history = []              # append-only refinement log
        self.viewpoint = (0.0, 0.0)    # (yaw, pitch) of the last contour render
        self.lock = threading.Lock()

    # -- persistence ---------------------------------------------------------

    @property
    def state_path(self):
        return os.path.join(self.state_dir, f"{self.id}.json")

    def save(self):
        os.makedirs(self.state_dir, exist_ok=True)
        state = {
            "id": self.id,
            "bundle_path": self.bundle.path,
            "edit_frame": self.edit_frame,
            "mapping": self.mapping,
            "deformed": {k: np.asarray(v).tolist() for k, v in self.deformed.items()},
            "identity_vertices": (None if self.identity_vertices is None
                                  else self.identity_vertices.tolist()),
            "history": self.history,
            "viewpoint": list(self.viewpoint),
        }
        tmp = self.state_path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(state, fh)
        os.replace(tmp, self.state_path)

    @classmethod
    def load(cls, state_path):
        with open(state_path) as fh:
            state = json.load(fh)
        s = cls(state["bundle_path"], os.path.dirname(state_path), state["id"])
        s.edit_frame = state["edit_frame"]
        s.mapping = state["mapping"]
        s.deformed = {k: np.array(v) for k, v in state["deformed"].items()}
        if state["identity_vertices"] is not None:
            s.identity_vertices = np.array(state["identity_vertices"])
        s.history = state["history"]
        s.viewpoint = tuple(state.get("viewpoint", (0.0, 0.0)))
        return s

    # -- editing -------------------------------------------------------------

    def current_identity(self):
        mesh = self.bundle.mesh
        if self.identity_vertices is None:
            return mesh
        return mesh.with_vertices(self.identity_vertices)

    def landmarks(self, t):
        return self.bundle.landmarks_2d(t)

    def submit_strokes(self, t, strokes):
        """Map the stroke sequence, deform the assigned groups (last wins)."""
        if not strokes:
            raise SessionError("empty stroke set")
        if not (0 <= t < self.bundle.frame_count):
            raise SessionError(f"frame {t} out of range")
        self.edit_frame = t
        groups = self.bundle.groups_for_frame(t)
        by_name = {g.name: g for g in groups}
        cfg = self.bundle.hmm_config(t)
        result = viterbi_map(strokes, groups, cfg)

        stroke_by_order = {s.order_index: s for s in strokes}
        diag = self.bundle.face_bbox_diag(t)
        dcfg = DeformConfig(norm_scale=diag)
        deformed = {}
        for order, name in result.assignments:
            if order in result.superseded:
                continue
            g = by_name[name]
            kp = resample_stroke(stroke_by_order[order], len(g))
            d_rev = np.linalg.norm(kp[::-1] - g.current_points, axis=1).mean()
            d_fwd = np.linalg.norm(kp - g.current_points, axis=1).mean()
            if d_rev < d_fwd:
                kp = kp[::-1]
            deformed[name] = deform_group(g, kp, dcfg).points

        self.deformed.update({k: np.asarray(v) for k, v in deformed.items()})
        self.mapping = {
            "assignments": [[int(o), n] for o, n in result.assignments],
            "rejected": [int(o) for o in result.rejected],
            "superseded": [int(o) for o in result.superseded],
        }
        self.save()
        return {
            "mapping": self.mapping,
            "deformed_groups": {k: v.tolist() for k, v in self.deformed.items()},
            "landmarks": self.landmarks(t).tolist(),
            "sigma": cfg.sigma,
        }

    def _constraints_from_deformed(self):
        t = self.edit_frame
        b = self.bundle
        mesh = b.mesh
        groups = dict(b.group_specs)
        posed = b.posed_vertices(t)
        _, offset = b.composed_shape(t)
        disp = b.params[t].displacements
        pose = b.params[t].pose
        cons = []
        for name, pts in self.deformed.items():
            idx = groups[name]
            for k, p2d in zip(idx, np.asarray(pts)):
                vid = int(mesh.landmark_vertex_ids[k])
                if vid in mesh.boundary_vertices:
                    continue
                # strokes edit on-screen landmarks (projection + displacement);
                # remove the displacement before lifting to 3D
                lift2d = np.asarray(p2d) - disp[k]
                cam_pt = estimate_modified_landmark_3d(lift2d, posed[vid], b.camera)
                target = to_identity_target(cam_pt, pose, offset[vid])
                cons.append(LandmarkConstraint(vid, target))
        return cons

    def apply_edit(self):
        """Depth lift, expression removal and the Eq. 9 transfer solve."""
        if not self.deformed:
            raise SessionError("nothing to apply: no deformed groups")
        cons = self._constraints_from_deformed()
        problem = make_transfer_problem(self.bundle.mesh, cons, DEFAULT_WEIGHTS)
        result = transfer_identity(problem)
        self.identity_vertices = np.array(result.vertices)
        self.save()
        disp = np.linalg.norm(result.vertices - self.bundle.mesh.vertices, axis=1)
        return {
            "constraints": len(cons),
            "max_vertex_displacement": float(disp.max()),
            "mean_vertex_displacement": float(disp.mean()),
        }

    # -- refinement ----------------------------------------------------------

    def contour_view(self, yaw=0.0, pitch=0.0):
        """Viewpoint pose framing the current identity at a comfortable depth."""
        mesh = self.current_identity()
        r = _rot_x(pitch) @ _rot_y(yaw)
        center = mesh.vertices.mean(axis=0)
        diag = float(np.linalg.norm(mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)))
        t = np.array([0.0, 0.0, 2.5 * diag]) - r @ center
        return RigidPose(r, t)

    def get_contours(self, yaw=0.0, pitch=0.0):
        self.viewpoint = (float(yaw), float(pitch))
        view = self.contour_view(yaw, pitch)
        cmap = render_contours(self.current_identity(), view, self.bundle.camera)
        self.save()
        return cmap

    def submit_refine(self, erased_region, replacement_stroke):
        """Redrawn contour line -> constraints -> re-solve with boosted weights."""
        yaw, pitch = self.viewpoint
        view = self.contour_view(yaw, pitch)
        mesh = self.current_identity()
        cmap = render_contours(mesh, view, self.bundle.camera)
        edit = RefineEdit(np.asarray(erased_region, dtype=np.float64),
                          Stroke(np.asarray(replacement_stroke, dtype=np.float64), 0))
        cons = refine_constraints(cmap, edit, mesh)
        if not cons:
            return {"applied": False, "constraints": 0,
                    "warning": "erased region overlaps no contour polyline"}
        problem = make_transfer_problem(mesh, cons, REFINE_WEIGHTS)
        result = transfer_identity(problem)
        before = mesh.vertices
        self.identity_vertices = np.array(result.vertices)
        self.history.append({
            "viewpoint": [yaw, pitch],
            "constraints": len(cons),
            "max_delta": float(np.linalg.norm(result.vertices - before, axis=1).max()),
        })
        self.save()
        return {"applied": True, "constraints": len(cons),
                "history_length": len(self.history)}

    # -- propagation ---------------------------------------------------------

    def run_propagation(self, out_dir=None, progress_cb=None, warp_background=True):
        """Render the whole sequence with the current identity into out_dir."""
        from PIL import Image

        out_dir = out_dir or os.path.join(self.bundle.path, "out")
        os.makedirs(out_dir, exist_ok=True)
        frames = propagate(self.bundle, self.current_identity(),
                           progress_cb=progress_cb, warp_background=warp_background)
        paths = []
        for t, img in enumerate(frames):
            p = os.path.join(out_dir, f"{t:06d}.png")
            Image.fromarray(img.pixels).save(p)
            paths.append(p)
        return paths
