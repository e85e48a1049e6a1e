import numpy as np
import pytest
from scipy.optimize import minimize

from meshsplat.arap import (ArapProblem, ArapSystem, arap_energy, arap_solve,
                            handles_from_field)
from meshsplat.errors import NoConstraints, SolverSingular
from meshsplat.fields import make_time_field
from meshsplat.geom import rotation_about_axis
from meshsplat.mesh import TriMesh


def grid_strip(rows=3, cols=3):
    verts = np.array([[c, r, 0.0] for r in range(rows) for c in range(cols)])
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            faces += [[a, a + 1, a + cols], [a + 1, a + cols + 1, a + cols]]
    return TriMesh(verts, np.array(faces))


class TestEnergy:
    def test_rest_pose_zero(self):
        mesh = grid_strip()
        sys_ = ArapSystem(mesh, np.array([0]))
        eye = np.broadcast_to(np.eye(3), (9, 3, 3))
        assert sys_.energy(mesh.vertices, eye) == 0.0

    def test_global_rigid_motion_zero(self):
        mesh = grid_strip()
        R = rotation_about_axis((1, 1, 0), 0.8)
        t = np.array([0.3, -0.5, 1.0])
        sys_ = ArapSystem(mesh, np.array([0]))
        rots = np.broadcast_to(R, (9, 3, 3))
        assert sys_.energy(mesh.vertices @ R.T + t, rots) < 1e-24

    def test_single_stretched_edge(self):
        # one edge doubled in length contributes 1 from each direction
        rest = np.array([[0, 0, 0], [1, 0, 0.0]])
        deformed = np.array([[0, 0, 0], [2, 0, 0.0]])
        edges = np.array([[0, 1], [1, 0]])
        eye = np.broadcast_to(np.eye(3), (2, 3, 3))
        assert arap_energy(rest, deformed, eye, edges, np.ones(2)) == 2.0


class TestSolver:
    def bar_problem(self):
        mesh = grid_strip(3, 3)
        handles = np.array([0, 3, 6, 2, 5, 8])
        targets = mesh.vertices[handles].copy()
        targets[3:] += np.array([1.0, 0.0, 0.0])
        return mesh, handles, targets

    def test_all_vertices_rigid(self):
        mesh = grid_strip()
        R = rotation_about_axis((0, 0, 1), 0.7)
        targets = mesh.vertices @ R.T + np.array([0.2, -0.1, 0.5])
        sol = arap_solve(ArapProblem(mesh, np.arange(9), targets))
        assert sol.energy <= 1e-9
        assert np.abs(sol.vertices - targets).max() < 1e-12

    def test_partial_rigid_handles_follow(self):
        mesh = grid_strip()
        R = rotation_about_axis((0, 0, 1), 0.7)
        targets = mesh.vertices @ R.T + np.array([0.2, -0.1, 0.5])
        sol = arap_solve(ArapProblem(mesh, np.array([0, 2, 8]), targets[[0, 2, 8]],
                                     max_iterations=1500, tolerance=1e-11))
        assert sol.energy <= 1e-6
        assert np.abs(sol.vertices - targets).max() < 1e-4

    def test_nine_vertex_bar_matches_brute_force(self):
        mesh, handles, targets = self.bar_problem()
        sol = arap_solve(ArapProblem(mesh, handles, targets,
                                     max_iterations=2000, tolerance=1e-12))
        sys_ = ArapSystem(mesh, handles)
        free = np.array([1, 4, 7])
        verts = mesh.vertices

        def rodrigues(rv):
            th = np.linalg.norm(rv)
            if th < 1e-12:
                return np.eye(3)
            return rotation_about_axis(rv / th, th)

        def energy(x):
            V2 = verts.copy()
            V2[handles] = targets
            V2[free] = x[:9].reshape(3, 3)
            rots = np.stack([rodrigues(x[9 + 3 * i: 12 + 3 * i]) for i in range(9)])
            return sys_.energy(V2, rots)

        best = np.inf
        for trial in range(5):
            rng = np.random.default_rng(trial)
            x0 = np.concatenate([verts[free].ravel() + rng.normal(0, 0.3, 9),
                                 rng.normal(0, 0.5, 27)])
            res = minimize(energy, x0, method="L-BFGS-B",
                           options={"maxiter": 4000, "ftol": 1e-16, "gtol": 1e-12})
            best = min(best, res.fun)
        assert abs(best - sol.energy) <= 1e-6

    def test_isolated_unhandled_vertex(self):
        mesh = grid_strip()
        verts = np.vstack([mesh.vertices, [[5, 5, 5.0]]])
        mesh10 = TriMesh(verts, mesh.faces)
        with pytest.raises(SolverSingular):
            ArapSystem(mesh10, np.array([0]))

    def test_no_constraints(self):
        with pytest.raises(NoConstraints):
            ArapProblem(grid_strip(), np.zeros(0, int), np.zeros((0, 3)))

    def test_translation_equivariance(self):
        mesh, handles, targets = self.bar_problem()
        kwargs = dict(max_iterations=300, tolerance=1e-10)
        sol1 = arap_solve(ArapProblem(mesh, handles, targets, **kwargs))
        shift = np.array([0.5, -1.0, 2.0])
        sol2 = arap_solve(ArapProblem(mesh, handles, targets + shift, **kwargs))
        assert np.abs(sol2.vertices - (sol1.vertices + shift)).max() < 1e-8

    def test_energy_monotone_on_random_problems(self):
        rng = np.random.default_rng(10)
        for trial in range(100):
            rows = int(rng.integers(2, 4))
            cols = int(rng.integers(2, 5))
            mesh = grid_strip(rows, cols)
            n = mesh.num_vertices
            k = int(rng.integers(1, max(n // 2, 2)))
            handles = rng.choice(n, size=k, replace=False)
            targets = mesh.vertices[handles] + rng.normal(0, 0.5, (k, 3))
            sol = arap_solve(ArapProblem(mesh, handles, targets,
                                         max_iterations=25))
            hist = np.array(sol.energy_history)
            assert np.all(np.diff(hist) <= 1e-9 * np.maximum(hist[:-1], 1.0))

    def test_handles_exactly_satisfied(self):
        mesh, handles, targets = self.bar_problem()
        sol = arap_solve(ArapProblem(mesh, handles, targets))
        assert np.abs(sol.vertices[handles] - targets).max() <= 1e-9

    def test_rest_targets_short_circuit(self):
        mesh, handles, _ = self.bar_problem()
        sol = arap_solve(ArapProblem(mesh, handles, mesh.vertices[handles]))
        assert sol.energy == 0.0
        assert np.array_equal(sol.vertices, mesh.vertices)

    def test_warm_start_converges_same(self):
        mesh, handles, targets = self.bar_problem()
        kwargs = dict(max_iterations=2000, tolerance=1e-13)
        cold = arap_solve(ArapProblem(mesh, handles, targets, **kwargs))
        warm = arap_solve(ArapProblem(mesh, handles, targets, **kwargs),
                          warm_start=cold.vertices + 0.01)
        assert np.abs(cold.vertices - warm.vertices).max() < 1e-6

    def test_cotangent_flag(self):
        mesh, handles, targets = self.bar_problem()
        sol = arap_solve(ArapProblem(mesh, handles, targets, weighting="cotangent"))
        assert sol.energy >= 0.0
        assert np.abs(sol.vertices[handles] - targets).max() <= 1e-9


class TestHandlesFromField:
    def test_zero_field_targets_rest(self):
        mesh = grid_strip()
        field = make_time_field(1, hidden=16, depth=8)
        ids = np.array([0, 4, 8])
        targets = handles_from_field(mesh, ids, field, 0.5)
        assert np.abs(targets - mesh.vertices[ids]).max() == 0

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        mesh = grid_strip()
        field = make_time_field(1, hidden=16, depth=8, rng=rng)
        field.net.weights[-1][:] = rng.normal(0, 0.1, field.net.weights[-1].shape)
        ids = np.array([1, 3])
        a = handles_from_field(mesh, ids, field, 0.25)
        b = handles_from_field(mesh, ids, field, 0.25)
        assert np.array_equal(a, b)
