import numpy as np
import pytest

from sketchface.face_model import FaceMesh


def make_grid_mesh(nx=5, ny=5, bump=True):
    """Open planar-ish grid mesh used across solver and model tests."""
    xs, ys = np.meshgrid(np.linspace(0.0, 1.0, nx), np.linspace(0.0, 1.0, ny))
    z = 0.05 * np.sin(2.5 * xs) * np.cos(1.5 * ys) if bump else np.zeros_like(xs)
    verts = np.stack([xs.ravel(), ys.ravel(), z.ravel()], axis=1)
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            tris.append([a, a + 1, a + nx + 1])
            tris.append([a, a + nx + 1, a + nx])
    uvs = np.stack([xs.ravel(), ys.ravel()], axis=1)
    n = verts.shape[0]
    lm = np.unique(np.linspace(0, n - 1, min(12, n), dtype=np.int64))
    return FaceMesh(verts, np.array(tris), lm, uvs)


def make_icosphere(subdiv=2, radius=1.0):
    """Closed icosphere with outward-facing triangles."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = (np.asarray(verts[a]) + verts[b]) / 2.0
            m /= np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    for _ in range(subdiv):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius
    tris = np.array(faces, dtype=np.int64)
    uvs = np.zeros((len(v), 2))
    lm = np.arange(min(68, len(v)), dtype=np.int64)
    return FaceMesh(v, tris, lm, uvs)


@pytest.fixture(scope="session")
def demo_bundle_path(tmp_path_factory):
    from sketchface.synthetic import generate_bundle
    path = tmp_path_factory.mktemp("bundle") / "demo"
    generate_bundle(str(path), n_frames=6, seed=7)
    return str(path)


@pytest.fixture(scope="session")
def demo_bundle(demo_bundle_path):
    from sketchface.bundle import SessionBundle
    return SessionBundle(demo_bundle_path)
