"""As-rigid-as-possible surface deformation with hard handle constraints.

Classic local-global alternation: per-vertex best-fit rotations from the
polar factor of the edge covariance (local), then a weighted-Laplacian
linear solve with handle rows eliminated (global). The reduced system is
factored once per (mesh, handle set) and reused across solves and frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import NoConstraints, SolverSingular
from .geom import polar_rotation_batch
from .mesh import TriMesh


@dataclass
class ArapProblem:
    mesh: TriMesh
    handle_ids: np.ndarray          # (K,) unique vertex indices
    handle_targets: np.ndarray      # (K,3)
    weighting: str = "uniform"      # "uniform" (paper choice) or "cotangent"
    max_iterations: int = 50
    tolerance: float | None = None  # default 1e-5 * bbox diagonal

    def __post_init__(self):
        self.handle_ids = np.asarray(self.handle_ids, np.int64).reshape(-1)
        self.handle_targets = np.asarray(self.handle_targets, float).reshape(-1, 3)
        if len(self.handle_ids) == 0:
            raise NoConstraints("a deformation problem needs at least one handle")
        if len(np.unique(self.handle_ids)) != len(self.handle_ids):
            raise ValueError("handle indices must be unique")
        if self.handle_ids.min() < 0 or self.handle_ids.max() >= self.mesh.num_vertices:
            raise ValueError("handle index out of range")
        if len(self.handle_targets) != len(self.handle_ids):
            raise ValueError("one target per handle required")


@dataclass
class ArapSolution:
    vertices: np.ndarray       # (N,3) deformed positions, handles exact
    rotations: np.ndarray      # (N,3,3)
    energy: float
    iterations: int
    energy_history: list = field(default_factory=list)


def _edge_weights(mesh: TriMesh, weighting: str, src, dst):
    if weighting == "uniform":
        return np.ones(len(src))
    if weighting != "cotangent":
        raise ValueError(f"unknown weighting {weighting!r}")
    # half cotangent of the angles opposite each edge, clamped positive
    acc: dict[tuple[int, int], float] = {}
    V = mesh.vertices
    for tri in mesh.faces:
        for k in range(3):
            i, j, o = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            a = V[i] - V[o]
            b = V[j] - V[o]
            cot = float(np.dot(a, b) / max(np.linalg.norm(np.cross(a, b)), 1e-12))
            for key in ((int(i), int(j)), (int(j), int(i))):
                acc[key] = acc.get(key, 0.0) + 0.5 * cot
    w = np.array([max(acc[(int(s), int(d))], 1e-8) for s, d in zip(src, dst)])
    return w


class ArapSystem:
    """Reusable factorization for a fixed mesh + handle set + weighting."""

    def __init__(self, mesh: TriMesh, handle_ids, weighting: str = "uniform"):
        handle_ids = np.asarray(handle_ids, np.int64).reshape(-1)
        if len(handle_ids) == 0:
            raise NoConstraints("a deformation problem needs at least one handle")
        n = mesh.num_vertices
        edges = mesh.directed_edges()
        self.mesh = mesh
        self.src = edges[:, 0]
        self.dst = edges[:, 1]
        self.w = _edge_weights(mesh, weighting, self.src, self.dst)
        self.handle_ids = handle_ids

        adj = coo_matrix((self.w, (self.src, self.dst)), shape=(n, n))
        n_comp, labels = connected_components(adj, directed=False)
        has_handle = np.zeros(n_comp, bool)
        has_handle[labels[handle_ids]] = True
        if not has_handle.all():
            comp = int(np.flatnonzero(~has_handle)[0])
            raise SolverSingular(
                f"connected component {comp} has no handle; the reduced "
                "Laplacian is rank-deficient")

        deg = np.asarray(adj.sum(axis=1)).ravel()
        L = csr_matrix(
            coo_matrix((np.concatenate([deg, -self.w]),
                        (np.concatenate([np.arange(n), self.src]),
                         np.concatenate([np.arange(n), self.dst]))),
                       shape=(n, n)))
        is_handle = np.zeros(n, bool)
        is_handle[handle_ids] = True
        self.free = np.flatnonzero(~is_handle)
        self.L = L
        self._L_ff = L[self.free][:, self.free].tocsc()
        self._L_fh = L[self.free][:, handle_ids].tocsc()
        if len(self.free):
            if np.any(self._L_ff.diagonal() <= 0):
                raise SolverSingular("reduced system has a non-positive diagonal")
            try:
                self._factor = splu(self._L_ff)
            except RuntimeError as e:  # exactly singular
                raise SolverSingular(str(e)) from e
        else:
            self._factor = None

    def rest_edge_vectors(self):
        V = self.mesh.vertices
        return V[self.src] - V[self.dst]

    def energy(self, deformed: np.ndarray, rotations: np.ndarray) -> float:
        e_rest = self.rest_edge_vectors()
        e_def = deformed[self.src] - deformed[self.dst]
        rot_e = np.einsum("eij,ej->ei", rotations[self.src], e_rest)
        return float(np.sum(self.w * np.sum((e_def - rot_e) ** 2, axis=1)))

    def local_rotations(self, deformed: np.ndarray) -> np.ndarray:
        e_rest = self.rest_edge_vectors()
        e_def = deformed[self.src] - deformed[self.dst]
        outer = self.w[:, None, None] * e_def[:, :, None] * e_rest[:, None, :]
        S = np.zeros((self.mesh.num_vertices, 3, 3))
        np.add.at(S, self.src, outer)
        return polar_rotation_batch(S)

    def global_solve(self, rotations: np.ndarray, targets: np.ndarray) -> np.ndarray:
        V = self.mesh.vertices
        e_rest = V[self.src] - V[self.dst]
        rhs_edge = 0.5 * self.w[:, None] * np.einsum(
            "eij,ej->ei", rotations[self.src] + rotations[self.dst], e_rest)
        b = np.zeros((self.mesh.num_vertices, 3))
        np.add.at(b, self.src, rhs_edge)
        out = np.empty_like(b)
        out[self.handle_ids] = targets
        if len(self.free):
            rhs = b[self.free] - self._L_fh @ targets
            out[self.free] = self._factor.solve(rhs)
        return out

    def solve(self, targets, warm_start: np.ndarray | None = None,
              max_iterations: int = 50, tolerance: float | None = None) -> ArapSolution:
        targets = np.asarray(targets, float).reshape(-1, 3)
        V = self.mesh.vertices
        n = self.mesh.num_vertices
        if np.array_equal(targets, V[self.handle_ids]):
            eye = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            return ArapSolution(V.copy(), eye, 0.0, 0, [0.0])

        if tolerance is None:
            tolerance = 1e-5 * max(self.mesh.bbox_diagonal(), 1e-12)
        if warm_start is not None:
            deformed = np.asarray(warm_start, float).copy()
            deformed[self.handle_ids] = targets
        else:
            deformed = V.copy()
            deformed[self.handle_ids] = targets

        history = []
        rotations = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        prev_energy = None
        iterations = 0
        for it in range(max_iterations):
            rotations = self.local_rotations(deformed)
            new_deformed = self.global_solve(rotations, targets)
            energy = self.energy(new_deformed, rotations)
            history.append(energy)
            if prev_energy is not None and energy > prev_energy + 1e-9 * max(1.0, prev_energy):
                raise AssertionError(
                    f"energy increased {prev_energy} -> {energy} at iteration {it}")
            moved = float(np.abs(new_deformed - deformed).max())
            deformed = new_deformed
            iterations = it + 1
            prev_energy = energy
            if moved < tolerance:
                break
        return ArapSolution(deformed, rotations, prev_energy, iterations, history)


def arap_energy(rest: np.ndarray, deformed: np.ndarray, rotations: np.ndarray,
                edges: np.ndarray, weights: np.ndarray) -> float:
    """Vertex-centric energy over directed edges (i, j)."""
    src, dst = edges[:, 0], edges[:, 1]
    e_rest = rest[src] - rest[dst]
    e_def = deformed[src] - deformed[dst]
    rot_e = np.einsum("eij,ej->ei", rotations[src], e_rest)
    return float(np.sum(weights * np.sum((e_def - rot_e) ** 2, axis=1)))


def arap_solve(problem: ArapProblem, warm_start: np.ndarray | None = None,
               system: ArapSystem | None = None) -> ArapSolution:
    if system is None:
        system = ArapSystem(problem.mesh, problem.handle_ids, problem.weighting)
    return system.solve(problem.handle_targets, warm_start,
                        problem.max_iterations, problem.tolerance)


def handles_from_field(mesh: TriMesh, handle_ids, time_field, t: float):
    """Handle targets = rest position + the time field's position delta."""
    from .fields import df_query

    handle_ids = np.asarray(handle_ids, np.int64).reshape(-1)
    rest = mesh.vertices[handle_ids]
    deltas, _ = df_query(time_field, rest, float(t))
    return rest + deltas["mu"]
