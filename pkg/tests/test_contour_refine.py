import warnings

import numpy as np
import pytest

from sketchface import contour_refine as cr
from sketchface.face_model import Camera, FaceMesh, RigidPose
from tests.conftest import make_icosphere


@pytest.fixture(scope="module")
def cam():
    return Camera(300.0, np.array([160.0, 120.0]), (320, 240))


@pytest.fixture(scope="module")
def frontal():
    return RigidPose(np.eye(3), np.array([0.0, 0.0, 6.0]))


class TestRenderContours:
    def test_sphere_silhouette_matches_analytic_circle(self, cam, frontal):
        sphere = make_icosphere(3)
        cmap = cr.render_contours(sphere, frontal, cam)
        occ = [p for p in cmap.polylines if p.label == "occluding_contour"]
        assert len(occ) == 1
        loop = occ[0]
        assert loop.closed
        r_expected = 1.0 * cam.focal / 6.0
        radii = np.linalg.norm(loop.points - cam.principal_point, axis=1)
        edges = np.linalg.norm(np.diff(sphere.vertices[sphere.triangles[:, 0]]
                                       - sphere.vertices[sphere.triangles[:, 1]], axis=0))
        mean_edge_px = np.linalg.norm(
            sphere.vertices[sphere.triangles[:, 0]]
            - sphere.vertices[sphere.triangles[:, 1]], axis=1).mean() * cam.focal / 6.0
        assert np.abs(radii - r_expected).max() < mean_edge_px

    def test_flat_quad_boundaries_only(self, cam, frontal):
        v = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0],
                      [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]])
        quad = FaceMesh(v, np.array([[0, 1, 2], [0, 2, 3]]),
                        np.array([0, 1]), np.zeros((4, 2)))
        cmap = cr.render_contours(quad, frontal, cam)
        occ = [p for p in cmap.polylines if p.label == "occluding_contour"]
        sb = [p for p in cmap.polylines if p.label == "shape_boundary"]
        assert occ == []
        n_segments = sum(len(p.points) if p.closed else len(p.points) - 1 for p in sb)
        assert n_segments == 4

    def test_equivariance_under_joint_rotation(self, cam, frontal):
        sphere = make_icosphere(2)
        # bumpy sphere so the contour is nontrivial
        bumpy = sphere.with_vertices(
            sphere.vertices * (1.0 + 0.1 * np.sin(3 * sphere.vertices[:, 0]))[:, None])
        a = np.deg2rad(25)
        r = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
        rotated = bumpy.with_vertices(bumpy.vertices @ r.T)
        view2 = RigidPose(frontal.rotation @ r.T, frontal.translation)
        m1 = cr.render_contours(bumpy, frontal, cam)
        m2 = cr.render_contours(rotated, view2, cam)
        lines1 = sorted([(p.label, p.points.round(9).tobytes()) for p in m1.polylines])
        lines2 = sorted([(p.label, p.points.round(9).tobytes()) for p in m2.polylines])
        assert lines1 == lines2

    def test_exterior_silhouette_present_on_sphere(self, cam, frontal):
        sphere = make_icosphere(3)
        cmap = cr.render_contours(sphere, frontal, cam)
        ext = [p for p in cmap.polylines if p.label == "exterior_silhouette"]
        assert ext, "sphere outline must be emitted as exterior silhouette"

    def test_vertex_behind_camera_rejected(self, cam):
        sphere = make_icosphere(1)
        with pytest.raises(cr.ContourError):
            cr.render_contours(sphere, RigidPose(np.eye(3), np.zeros(3)), cam)

    def test_deterministic(self, cam, frontal):
        sphere = make_icosphere(2)
        m1 = cr.render_contours(sphere, frontal, cam)
        m2 = cr.render_contours(sphere, frontal, cam)
        assert len(m1.polylines) == len(m2.polylines)
        for a, b in zip(m1.polylines, m2.polylines):
            assert a.label == b.label and (a.points == b.points).all()

    def test_json_serialization(self, cam, frontal):
        sphere = make_icosphere(2)
        blob = cr.render_contours(sphere, frontal, cam).to_json()
        assert blob["polylines"], "contour JSON must carry polylines"
        first = blob["polylines"][0]
        assert set(first) == {"label", "closed", "points", "depths", "vertex_ids"}
        assert len(first["points"]) == len(first["depths"])


def region_around(points, pad=4.0):
    lo = points.min(axis=0) - pad
    hi = points.max(axis=0) + pad
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


class TestRefineConstraints:
    @pytest.fixture(scope="class")
    def scene(self, cam, frontal):
        sphere = make_icosphere(3)
        cmap = cr.render_contours(sphere, frontal, cam)
        occ = [p for p in cmap.polylines if p.label == "occluding_contour"][0]
        return sphere, cmap, occ

    def test_identity_redraw_recovers_original_positions(self, scene):
        sphere, cmap, occ = scene
        seg = occ.points[3:12]
        edit = cr.RefineEdit(region_around(seg),
                             cr.Stroke(np.asarray(seg), 0))
        cons = cr.refine_constraints(cmap, edit, sphere)
        assert cons
        for c in cons:
            assert np.abs(c.target - sphere.vertices[c.vertex_id]).max() < 1e-8

    def test_translated_redraw_shifts_projections(self, scene, cam, frontal):
        from sketchface.face_model import project_points
        sphere, cmap, occ = scene
        seg = np.asarray(occ.points[3:12])
        shift = np.array([5.0, 0.0])
        edit = cr.RefineEdit(region_around(seg), cr.Stroke(seg + shift, 0))
        cons = cr.refine_constraints(cmap, edit, sphere)
        assert cons
        ids = {c.vertex_id: c.target for c in cons}
        for p2d, vid in zip(seg, occ.vertex_ids[3:12]):
            if int(vid) not in ids:
                continue
            reproj = project_points(frontal.apply(ids[int(vid)]), cam)
            assert np.abs(reproj - (p2d + shift)).max() < 1.0

    def test_no_overlap_warns_and_returns_empty(self, scene):
        sphere, cmap, _ = scene
        far = np.array([[1000.0, 1000.0], [1010.0, 1000.0],
                        [1010.0, 1010.0], [1000.0, 1010.0]])
        edit = cr.RefineEdit(far, cr.Stroke(np.array([[0.0, 0.0], [1.0, 1.0]]), 0))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cons = cr.refine_constraints(cmap, edit, sphere)
        assert cons == []
        assert any("overlaps no contour" in str(w.message) for w in caught)


class TestPointsInPolygon:
    def test_square(self):
        poly = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
        pts = np.array([[5.0, 5.0], [15.0, 5.0], [-1.0, 3.0], [9.9, 9.9]])
        assert cr.points_in_polygon(pts, poly).tolist() == [True, False, False, True]

    def test_concave(self):
        poly = np.array([[0, 0], [10, 0], [10, 10], [5, 5], [0, 10]], dtype=float)
        pts = np.array([[5.0, 8.0], [2.0, 2.0]])
        assert cr.points_in_polygon(pts, poly).tolist() == [False, True]
