import numpy as np
import pytest
from scipy import ndimage

from clavage.mesh import (
    MeshError,
    connected_components,
    enclosed_volume,
    is_watertight,
    marching_cubes,
    mirror_mesh_x,
    obb_extents,
    sample_surface,
    save_off,
    surface_area,
)
from clavage.volume import BinaryMask

from conftest import (
    digitized_sphere_mask,
    make_box_mesh,
    make_icosphere,
    random_rotation,
    rotate_mesh,
)


def mask_of(data, spacing=1.0, origin=(0.0, 0.0, 0.0)):
    return BinaryMask(
        data=np.asarray(data, dtype=bool),
        spacing=np.full(3, spacing, dtype=np.float64),
        origin=np.array(origin, dtype=np.float64),
    )


class TestMarchingCubes:
    def test_empty_mask(self):
        mesh = marching_cubes(mask_of(np.zeros((4, 4, 4))))
        assert mesh.n_triangles == 0

    def test_digitized_sphere_volume_within_2pct(self):
        mesh = marching_cubes(digitized_sphere_mask(20))
        vol = enclosed_volume(mesh)
        exact = 4.0 / 3.0 * np.pi * 20**3
        assert abs(vol - exact) / exact < 0.02

    def test_single_voxel_closed_euler_2(self):
        mesh = marching_cubes(mask_of(np.ones((1, 1, 1))))
        tri = mesh.triangles
        edges = set()
        for t in tri:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                edges.add((min(t[a], t[b]), max(t[a], t[b])))
        v, e, f = len(np.unique(tri)), len(edges), len(tri)
        assert v - e + f == 2
        assert is_watertight(mesh)

    def test_watertight_on_random_blobs(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            data = rng.random((7, 6, 5)) < rng.uniform(0.2, 0.8)
            if not data.any():
                continue
            assert is_watertight(marching_cubes(mask_of(data)))

    def test_world_coordinates_respect_spacing_origin(self):
        mesh = marching_cubes(mask_of(np.ones((1, 1, 1)), spacing=2.0, origin=(10.0, 20.0, 30.0)))
        assert np.allclose(sorted(mesh.vertices[:, 0]), [9, 10, 10, 10, 10, 11])
        assert np.isclose(enclosed_volume(mesh), 8.0 / 6.0)


class TestConnectedComponents:
    def test_two_spheres(self):
        data = np.zeros((30, 12, 12), dtype=bool)
        g = np.indices(data.shape).astype(float)
        data |= (g[0] - 6) ** 2 + (g[1] - 6) ** 2 + (g[2] - 6) ** 2 <= 16
        data |= (g[0] - 22) ** 2 + (g[1] - 6) ** 2 + (g[2] - 6) ** 2 <= 16
        comps = connected_components(marching_cubes(mask_of(data)))
        assert len(comps) == 2

    def test_one_sphere(self):
        comps = connected_components(marching_cubes(digitized_sphere_mask(5)))
        assert len(comps) == 1

    def test_triangle_counts_partition(self):
        rng = np.random.default_rng(2)
        data = rng.random((8, 8, 8)) < 0.35
        mesh = marching_cubes(mask_of(data))
        comps = connected_components(mesh)
        assert sum(c.n_triangles for c in comps.components) == mesh.n_triangles
        counts = [c.n_triangles for c in comps.components]
        assert counts == sorted(counts, reverse=True)

    def test_matches_26_connectivity_label_count(self):
        # oracle: voxel labeling with full 26-connectivity, blobs >= 2 apart
        rng = np.random.default_rng(9)
        data = np.zeros((40, 20, 20), dtype=bool)
        g = np.indices(data.shape).astype(float)
        centers = [(6, 8, 8), (18, 8, 8), (31, 10, 10), (30, 5, 14)]
        for c in centers[:3]:
            data |= ((g[0] - c[0]) ** 2 + (g[1] - c[1]) ** 2 + (g[2] - c[2]) ** 2) <= 9
        n_regions, _ = ndimage.label(data, structure=np.ones((3, 3, 3)))[1], None
        comps = connected_components(marching_cubes(mask_of(data)))
        assert len(comps) == n_regions


class TestGeometry:
    def test_unit_cube_exact(self):
        cube = make_box_mesh()
        assert np.isclose(surface_area(cube), 6.0)
        assert np.isclose(enclosed_volume(cube), 1.0)
        assert np.allclose(obb_extents(cube), (1.0, 1.0, 1.0), atol=1e-9)

    def test_icosphere_area_volume_within_1pct(self, unit_icosphere):
        assert abs(surface_area(unit_icosphere) - 4 * np.pi) / (4 * np.pi) < 0.01
        assert abs(enclosed_volume(unit_icosphere) - 4 * np.pi / 3) / (4 * np.pi / 3) < 0.01

    def test_box_extents_rotation_invariant(self):
        box = make_box_mesh(size=(4.0, 2.0, 1.0))
        rng = np.random.default_rng(3)
        for _ in range(5):
            rotated = rotate_mesh(box, random_rotation(rng), shift=rng.normal(size=3))
            assert np.allclose(obb_extents(rotated), (4.0, 2.0, 1.0), rtol=0.02)

    def test_volume_rigid_invariance(self):
        mesh = make_icosphere(radius=1.0, subdivisions=2)
        v0 = enclosed_volume(mesh)
        rng = np.random.default_rng(5)
        moved = rotate_mesh(mesh, random_rotation(rng), shift=(3.0, -2.0, 7.0))
        assert abs(enclosed_volume(moved) - v0) / v0 < 1e-9

    def test_scaling_laws(self):
        mesh = make_icosphere(radius=1.0, subdivisions=2)
        s = 2.5
        scaled = mesh.__class__(mesh.vertices * s, mesh.triangles)
        assert np.isclose(surface_area(scaled), surface_area(mesh) * s**2)
        assert np.isclose(enclosed_volume(scaled), enclosed_volume(mesh) * s**3)

    def test_non_watertight_rejected(self):
        open_mesh = make_box_mesh()
        open_mesh = open_mesh.__class__(open_mesh.vertices, open_mesh.triangles[:-1])
        with pytest.raises(MeshError):
            enclosed_volume(open_mesh)

    def test_sample_surface_on_mesh(self):
        cube = make_box_mesh()
        pts = sample_surface(cube, 2000, np.random.default_rng(0))
        assert pts.shape == (2000, 3)
        on_face = np.isclose(pts, 0.0, atol=1e-12) | np.isclose(pts, 1.0, atol=1e-12)
        assert np.all(on_face.any(axis=1))
        assert np.all((pts > -1e-12) & (pts < 1 + 1e-12))


class TestMirrorAndExport:
    def test_mirror_preserves_volume_orientation(self):
        mesh = make_box_mesh(size=(2.0, 1.0, 1.0), origin=(5.0, 0.0, 0.0))
        mirrored = mirror_mesh_x(mesh, plane_x=0.0)
        assert np.isclose(enclosed_volume(mirrored), enclosed_volume(mesh))
        assert np.isclose(mirrored.vertices[:, 0].max(), -5.0)

    def test_off_export(self, tmp_path):
        cube = make_box_mesh()
        p = tmp_path / "cube.off"
        save_off(cube, p)
        lines = p.read_text().splitlines()
        assert lines[0] == "OFF"
        assert lines[1] == "8 12 0"
        assert len(lines) == 2 + 8 + 12
        assert lines[10].startswith("3 ")
