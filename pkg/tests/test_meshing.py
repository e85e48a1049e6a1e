import numpy as np
import pytest

from meshsplat.errors import EmptySurface
from meshsplat.gaussians import GaussianCloud
from meshsplat.mesh import TriMesh
from meshsplat.meshing import (DensityGrid, density_at, extract_mesh,
                               fill_density_grid, marching_cubes,
                               poisson_disk_handles)


def euler_characteristic(mesh):
    e = mesh.directed_edges()
    return mesh.num_vertices - len(e) // 2 + mesh.num_faces


def unit_gaussian():
    return GaussianCloud([[0, 0, 0]], [[1, 0, 0, 0]], [[1, 1, 1]], [1.0],
                         np.zeros((1, 1, 3)))


class TestDensity:
    def test_at_center_equals_opacity(self):
        assert abs(density_at(unit_gaussian(), [0, 0, 0]) - 1.0) < 1e-12

    def test_unit_distance(self):
        assert abs(density_at(unit_gaussian(), [1, 0, 0]) - np.exp(-0.5)) < 1e-12

    def test_empty_list(self):
        assert density_at(GaussianCloud.empty(), [0, 0, 0]) == 0.0

    def test_far_point_skipped(self):
        assert density_at(unit_gaussian(), [10, 0, 0]) == 0.0

    def test_grid_matches_pointwise(self):
        rng = np.random.default_rng(0)
        cloud = GaussianCloud(rng.normal(0, 0.3, (5, 3)), rng.normal(0, 1, (5, 4)),
                              np.exp(rng.normal(-1.5, 0.3, (5, 3))),
                              rng.uniform(0.2, 1, 5), np.zeros((5, 1, 3)))
        grid = fill_density_grid(cloud, (-1, -1, -1), 0.25, (9, 9, 9))
        pts = np.stack(np.meshgrid(*[np.arange(9) * 0.25 - 1] * 3,
                                   indexing="ij"), axis=-1).reshape(-1, 3)
        ref = density_at(cloud, pts).reshape(9, 9, 9)
        assert np.abs(grid.values - ref).max() < 1e-9

    def test_continuity(self):
        rng = np.random.default_rng(1)
        cloud = GaussianCloud(rng.normal(0, 0.3, (4, 3)), rng.normal(0, 1, (4, 4)),
                              np.exp(rng.normal(-1, 0.3, (4, 3))),
                              rng.uniform(0.2, 1, 4), np.zeros((4, 1, 3)))
        pts = rng.normal(0, 0.5, (200, 3))
        dirs = rng.normal(size=(200, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        eps = 1e-5
        lip = 0.0  # numerical Lipschitz bound from coarse sampling
        probe = rng.normal(0, 0.5, (500, 3))
        d0 = density_at(cloud, probe)
        d1 = density_at(cloud, probe + 1e-3)
        lip = max(np.abs(d1 - d0).max() / (1e-3 * np.sqrt(3)) * 10, 1.0)
        a = density_at(cloud, pts)
        b = density_at(cloud, pts + eps * dirs)
        assert np.abs(a - b).max() <= lip * eps * 10


class TestMarchingCubes:
    def sphere_grid(self, r=0.5, h=0.05):
        n = int(np.ceil(2 * (r + 4 * h) / h)) + 1
        origin = -np.full(3, (n - 1) / 2.0 * h)
        ax = [origin[i] + h * np.arange(n) for i in range(3)]
        g = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
        vals = r - np.linalg.norm(g, axis=-1)
        return DensityGrid(origin, h, vals)

    def test_analytic_sphere(self):
        h = 0.05
        grid = self.sphere_grid(0.5, h)
        mesh = marching_cubes(grid, 0.0)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert radii.min() >= 0.45 and radii.max() <= 0.55
        assert np.abs(radii - 0.5).max() <= h
        assert euler_characteristic(mesh) == 2

    def test_empty_surface(self):
        grid = DensityGrid((0, 0, 0), 1.0, np.ones((4, 4, 4)))
        with pytest.raises(EmptySurface):
            marching_cubes(grid, 0.5)

    def test_planar_field_exact(self):
        n = 8
        ax = np.arange(n) * 0.1
        vals = np.broadcast_to(ax[None, None, :] - 0.35, (n, n, n)).copy()
        mesh = marching_cubes(DensityGrid((0, 0, 0), 0.1, vals), 0.0)
        assert np.abs(mesh.vertices[:, 2] - 0.35).max() < 1e-9

    def test_no_duplicates_no_degenerates(self):
        mesh = marching_cubes(self.sphere_grid(), 0.0)
        uniq = np.unique(np.round(mesh.vertices, 9), axis=0)
        assert len(uniq) == mesh.num_vertices
        assert mesh.face_areas().min() > 1e-12


class TestExtractMesh:
    def test_single_gaussian_closed_genus0(self):
        cloud = GaussianCloud([[0.1, -0.2, 0.05]], [[1, 0, 0, 0]],
                              [[0.3, 0.3, 0.3]], [1.0], np.zeros((1, 1, 3)))
        mesh = extract_mesh(cloud, resolution=40)
        assert euler_characteristic(mesh) == 2
        # encloses the center: it lies inside the vertex bounding box
        assert np.all(mesh.vertices.min(0) < cloud.mu[0])
        assert np.all(mesh.vertices.max(0) > cloud.mu[0])

    def test_largest_component_kept(self):
        cloud = GaussianCloud([[0, 0, 0], [5, 0, 0]], [[1, 0, 0, 0]] * 2,
                              [[0.3] * 3, [0.12] * 3], [1, 1], np.zeros((2, 1, 3)))
        mesh = extract_mesh(cloud, resolution=64)
        assert np.linalg.norm(mesh.vertices, axis=1).max() < 2.0

    def test_deterministic_and_permutation_invariant(self):
        cloud = GaussianCloud([[0, 0, 0], [0.4, 0, 0]], [[1, 0, 0, 0]] * 2,
                              [[0.25] * 3, [0.2] * 3], [1, 0.8], np.zeros((2, 1, 3)))
        m1 = extract_mesh(cloud, resolution=32)
        m2 = extract_mesh(cloud, resolution=32)
        assert np.array_equal(m1.vertices, m2.vertices)
        rev = GaussianCloud(cloud.mu[::-1].copy(), cloud.quat[::-1].copy(),
                            cloud.scale[::-1].copy(), cloud.opacity[::-1].copy(),
                            cloud.sh[::-1].copy())
        m3 = extract_mesh(rev, resolution=32)
        assert np.allclose(m1.vertices, m3.vertices, atol=1e-12)

    def test_empty_cloud(self):
        with pytest.raises(EmptySurface):
            extract_mesh(GaussianCloud.empty(), resolution=16)


def icosphere(subdiv=3):
    t = (1 + 5**0.5) / 2
    verts = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                      [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                      [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = list(verts)
    for _ in range(subdiv):
        cache = {}
        new_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (verts[a] + verts[b]) / 2
                m = m / np.linalg.norm(m)
                verts.append(m)
                cache[key] = len(verts) - 1
            return cache[key]

        for f in faces:
            a, b, c = f
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return TriMesh(np.array(verts), np.array(faces))


class TestPoissonHandles:
    def test_single_handle_when_radius_dominates(self):
        mesh = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        hs = poisson_disk_handles(mesh, 1, seed=0)
        assert len(hs.indices) == 1

    def test_pairwise_separation_property(self):
        mesh = icosphere(2)
        for seed in range(5):
            hs = poisson_disk_handles(mesh, 12, seed=seed)
            pts = mesh.vertices[hs.indices]
            if len(pts) >= 2:
                d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
                assert d[np.triu_indices(len(pts), 1)].min() >= hs.min_separation - 1e-12

    def test_unit_icosphere_target_16(self):
        # area-based packing bound: unit sphere area 4*pi, radius
        # sqrt(4*pi/16)*0.7 = 0.62 packs 10..16 darts at >= 0.3 separation
        mesh = icosphere(3)
        hs = poisson_disk_handles(mesh, 16, seed=0)
        assert 10 <= len(hs.indices) <= 16
        assert hs.min_separation >= 0.3

    def test_deterministic(self):
        mesh = icosphere(2)
        a = poisson_disk_handles(mesh, 8, seed=3)
        b = poisson_disk_handles(mesh, 8, seed=3)
        assert np.array_equal(a.indices, b.indices)
