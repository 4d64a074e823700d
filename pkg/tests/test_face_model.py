import numpy as np
import pytest

from sketchface import face_model as fm
from tests.conftest import make_grid_mesh


@pytest.fixture(scope="module")
def plane_mesh():
    return make_grid_mesh(10, 10)


def naive_contraction(core, u, e):
    """Triple-loop oracle for the tensor contraction."""
    out = np.zeros(3 * core.n_vertices)
    for v in range(3 * core.n_vertices):
        for i in range(core.n_identity):
            for j in range(core.n_expression):
                out[v] += core.data[v, i, j] * u[i] * e[j]
    return out.reshape(core.n_vertices, 3)


class TestSynthesizeCore:
    def test_dimensions(self, plane_mesh):
        core = fm.synthesize_core(42, plane_mesh.n_vertices, 10, 8, plane_mesh)
        assert core.data.shape == (3 * plane_mesh.n_vertices, 10, 8)

    def test_deterministic(self, plane_mesh):
        a = fm.synthesize_core(42, plane_mesh.n_vertices, 4, 3, plane_mesh)
        b = fm.synthesize_core(42, plane_mesh.n_vertices, 4, 3, plane_mesh)
        assert (a.data == b.data).all()
        c = fm.synthesize_core(43, plane_mesh.n_vertices, 4, 3, plane_mesh)
        assert (a.data != c.data).any()

    def test_basis_contraction_returns_base_mesh(self, plane_mesh):
        core = fm.synthesize_core(42, plane_mesh.n_vertices, 4, 3, plane_mesh)
        u = np.zeros(4)
        u[0] = 1.0
        e = np.zeros(3)
        e[0] = 1.0
        assert (fm.contract(core, u, e) == plane_mesh.vertices).all()

    def test_perturbation_amplitude_bounded(self, plane_mesh):
        core = fm.synthesize_core(1, plane_mesh.n_vertices, 4, 3, plane_mesh)
        lo, hi = plane_mesh.vertices.min(axis=0), plane_mesh.vertices.max(axis=0)
        diag = np.linalg.norm(hi - lo)
        for i in range(4):
            for j in range(3):
                if i == 0 and j == 0:
                    continue
                fld = core.data[:, i, j].reshape(-1, 3)
                assert np.linalg.norm(fld, axis=1).max() <= 0.02 * diag + 1e-12

    def test_dimension_mismatch_rejected(self, plane_mesh):
        with pytest.raises(fm.FaceModelError):
            fm.synthesize_core(1, plane_mesh.n_vertices + 1, 4, 3, plane_mesh)


class TestBlendshapes:
    def test_basis_vector_selects_identity_slice(self, plane_mesh):
        core = fm.synthesize_core(5, plane_mesh.n_vertices, 4, 3, plane_mesh)
        for k in range(4):
            u = np.zeros(4)
            u[k] = 1.0
            b = fm.build_blendshapes(core, fm.IdentityCoeffs(u))
            expected = core.data[:, k, :].T.reshape(3, -1, 3)
            assert np.allclose(b.shapes, expected, atol=0)

    def test_linearity(self, plane_mesh):
        core = fm.synthesize_core(5, plane_mesh.n_vertices, 4, 3, plane_mesh)
        rng = np.random.default_rng(0)
        u1, u2 = rng.normal(size=4), rng.normal(size=4)
        b1 = fm.build_blendshapes(core, fm.IdentityCoeffs(u1)).shapes
        b2 = fm.build_blendshapes(core, fm.IdentityCoeffs(u2)).shapes
        b12 = fm.build_blendshapes(core, fm.IdentityCoeffs(u1 + u2)).shapes
        assert np.allclose(b12, b1 + b2, atol=1e-12)

    def test_matches_naive_triple_loop(self):
        mesh = make_grid_mesh(10, 5)  # 50 vertices
        core = fm.synthesize_core(9, mesh.n_vertices, 3, 4, mesh)
        rng = np.random.default_rng(1)
        u = rng.normal(size=3)
        e = rng.normal(size=4)
        assert np.abs(fm.contract(core, u, e) - naive_contraction(core, u, e)).max() < 1e-12

    def test_bilinear_superposition(self, plane_mesh):
        core = fm.synthesize_core(3, plane_mesh.n_vertices, 4, 3, plane_mesh)
        rng = np.random.default_rng(2)
        u, du = rng.normal(size=4), rng.normal(size=4)
        e, de = rng.normal(size=3), rng.normal(size=3)
        lhs = fm.contract(core, u + du, e)
        rhs = fm.contract(core, u, e) + fm.contract(core, du, e)
        assert np.abs(lhs - rhs).max() < 1e-10
        lhs = fm.contract(core, u, e + de)
        rhs = fm.contract(core, u, e) + fm.contract(core, u, de)
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_length_mismatch(self, plane_mesh):
        core = fm.synthesize_core(3, plane_mesh.n_vertices, 4, 3, plane_mesh)
        with pytest.raises(fm.FaceModelError):
            fm.build_blendshapes(core, fm.IdentityCoeffs(np.ones(5)))


@pytest.fixture(scope="module")
def shapes():
    mesh = make_grid_mesh(8, 8)
    core = fm.synthesize_core(11, mesh.n_vertices, 4, 5, mesh)
    u = np.array([1.0, 0.1, -0.05, 0.02])
    return fm.build_blendshapes(core, fm.IdentityCoeffs(u))


class TestComposeShape:
    def test_zero_expression_returns_neutral_exactly(self, shapes):
        shape, offset = fm.compose_shape(shapes, fm.ExpressionCoeffs(np.zeros(4)))
        assert (shape == shapes.neutral).all()
        assert (offset == 0).all()

    def test_basis_vector_returns_blendshape(self, shapes):
        for n in range(4):
            e = np.zeros(4)
            e[n] = 1.0
            shape, _ = fm.compose_shape(shapes, fm.ExpressionCoeffs(e))
            assert np.allclose(shape, shapes.shapes[n + 1], atol=1e-12)

    def test_matches_direct_summation(self, shapes):
        rng = np.random.default_rng(3)
        e = rng.normal(size=4)
        shape, offset = fm.compose_shape(shapes, fm.ExpressionCoeffs(e))
        direct = shapes.neutral.copy()
        for n in range(4):
            direct = direct + (shapes.shapes[n + 1] - shapes.neutral) * e[n]
        assert np.abs(shape - direct).max() < 1e-12
        assert np.abs(shape - (shapes.neutral + offset)).max() < 1e-12

    def test_length_mismatch(self, shapes):
        with pytest.raises(fm.FaceModelError):
            fm.compose_shape(shapes, fm.ExpressionCoeffs(np.zeros(7)))


class TestRigidTransform:
    def test_identity(self):
        pose = fm.RigidPose(np.eye(3), np.zeros(3))
        pts = np.random.default_rng(0).normal(size=(20, 3))
        assert (fm.transform_mesh(pts, pose) == pts).all()

    def test_known_rotation(self):
        r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        pose = fm.RigidPose(r, np.zeros(3))
        out = fm.transform_mesh(np.array([[1.0, 0.0, 0.0]]), pose)
        assert np.allclose(out, [[0.0, 1.0, 0.0]], atol=1e-15)

    def test_isometry(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        ang = 1.1
        k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        r = np.eye(3) + np.sin(ang) * k + (1 - np.cos(ang)) * (k @ k)
        pose = fm.RigidPose(r, rng.normal(size=3))
        pts = rng.normal(size=(30, 3))
        out = fm.transform_mesh(pts, pose)
        d_in = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        d_out = np.linalg.norm(out[:, None] - out[None], axis=2)
        assert np.abs(d_in - d_out).max() < 1e-9

    def test_invalid_rotation_rejected(self):
        with pytest.raises(fm.FaceModelError):
            fm.RigidPose(np.eye(3) * 2.0, np.zeros(3))


@pytest.fixture(scope="module")
def cam():
    return fm.Camera(500.0, np.array([320.0, 180.0]), (640, 360))


class TestProjection:
    def test_optical_axis_hits_principal_point(self, cam):
        out = fm.project_landmark(np.array([0.0, 0.0, 3.0]), cam)
        assert np.allclose(out, cam.principal_point, atol=0)

    def test_perspective_division(self, cam):
        p1 = fm.project_landmark(np.array([0.2, -0.1, 2.0]), cam)
        p2 = fm.project_landmark(np.array([0.2, -0.1, 4.0]), cam)
        off1 = p1 - cam.principal_point
        off2 = p2 - cam.principal_point
        assert np.allclose(off2, off1 / 2.0, atol=1e-12)

    def test_displacement_additivity(self, cam):
        base = fm.project_landmark(np.array([0.3, 0.2, 5.0]), cam)
        moved = fm.project_landmark(np.array([0.3, 0.2, 5.0]), cam, (3.0, -2.0))
        assert np.allclose(moved - base, [3.0, -2.0], atol=0)

    def test_focal_depth_joint_scaling(self):
        cam1 = fm.Camera(400.0, np.array([100.0, 100.0]), (200, 200))
        cam2 = fm.Camera(800.0, np.array([100.0, 100.0]), (200, 200))
        p = np.array([0.4, -0.3, 2.0])
        out1 = fm.project_landmark(p, cam1)
        out2 = fm.project_landmark(p * [1.0, 1.0, 2.0], cam2)
        assert np.allclose(out1, out2, atol=1e-12)

    def test_behind_camera_rejected(self, cam):
        with pytest.raises(fm.ProjectionError):
            fm.project_landmark(np.array([0.0, 0.0, -1.0]), cam)


class TestFaceMeshInvariants:
    def test_boundary_is_rim(self):
        mesh = make_grid_mesh(4, 4)
        rim = {i for i in range(16) if i // 4 in (0, 3) or i % 4 in (0, 3)}
        assert mesh.boundary_vertices == frozenset(rim)

    def test_degenerate_triangle_rejected(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        with pytest.raises(fm.FaceModelError):
            fm.FaceMesh(v, np.array([[0, 1, 2]]), np.array([0]), np.zeros((3, 2)))

    def test_duplicate_landmarks_rejected(self):
        mesh = make_grid_mesh(3, 3)
        with pytest.raises(fm.FaceModelError):
            fm.FaceMesh(mesh.vertices, mesh.triangles, np.array([1, 1]), mesh.uvs)

    def test_nonmanifold_rejected(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1.0]])
        tris = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
        with pytest.raises(fm.FaceModelError):
            fm.FaceMesh(v, tris, np.array([0]), np.zeros((5, 2)))
