import numpy as np
import pytest

from clavage.mesh import TriangleMesh
from clavage.volume import BinaryMask, HuVolume

# Outward-wound unit cube: 12 triangles over the 8 corners.
_CUBE_FACES = [
    (0, 2, 1), (0, 3, 2),  # z = 0
    (4, 5, 6), (4, 6, 7),  # z = 1
    (0, 1, 5), (0, 5, 4),  # y = 0
    (2, 3, 7), (2, 7, 6),  # y = 1
    (0, 4, 7), (0, 7, 3),  # x = 0
    (1, 2, 6), (1, 6, 5),  # x = 1
]


def make_box_mesh(size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    sx, sy, sz = size
    ox, oy, oz = origin
    corners = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=np.float64,
    )
    verts = corners * np.array([sx, sy, sz]) + np.array([ox, oy, oz])
    return TriangleMesh(verts, np.array(_CUBE_FACES, dtype=np.int64))


def make_icosphere(radius: float = 1.0, subdivisions: int = 4, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Analytically tessellated sphere (subdivided icosahedron)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    verts = np.array(verts) * radius + np.array(center)
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def digitized_sphere_mask(radius_vox: int, spacing: float = 1.0, origin=(0.0, 0.0, 0.0)) -> BinaryMask:
    n = 2 * radius_vox + 3
    c = (n - 1) / 2.0
    g = np.indices((n, n, n)).astype(np.float64)
    inside = (g[0] - c) ** 2 + (g[1] - c) ** 2 + (g[2] - c) ** 2 <= radius_vox**2
    return BinaryMask(data=inside, spacing=np.full(3, spacing), origin=np.array(origin, dtype=np.float64))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotate_mesh(mesh: TriangleMesh, rot: np.ndarray, shift=(0.0, 0.0, 0.0)) -> TriangleMesh:
    return TriangleMesh(mesh.vertices @ rot.T + np.asarray(shift), mesh.triangles)


def make_volume(data, spacing=1.0, origin=(0.0, 0.0, 0.0)) -> HuVolume:
    arr = np.asarray(data)
    if arr.dtype != np.int16:
        arr = np.clip(np.rint(arr), -1024, 3071).astype(np.int16)
    spacing = np.full(3, spacing, dtype=np.float64) if np.isscalar(spacing) else np.asarray(spacing, dtype=np.float64)
    return HuVolume(data=arr, spacing=spacing, origin=np.array(origin, dtype=np.float64))


@pytest.fixture(scope="session")
def unit_icosphere() -> TriangleMesh:
    return make_icosphere(radius=1.0, subdivisions=4)
