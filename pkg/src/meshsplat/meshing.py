"""Surface extraction from a Gaussian mixture and handle sampling.

The mixture is sampled onto a regular scalar grid (opacity-weighted Gaussian
density), an isosurface is pulled out with marching cubes, and deformation
handles are picked from mesh vertices by dart-throwing with a minimum
separation radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .errors import EmptySurface
from .gaussians import GaussianCloud
from .rasterizer import build_covariance

MAHALANOBIS_SKIP = 4.0  # mixture evaluation ignores farther Gaussians


@dataclass
class DensityGrid:
    origin: np.ndarray        # (3,)
    spacing: float            # cubic voxel edge, scene units
    values: np.ndarray        # (nx, ny, nz)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, float).reshape(3)
        self.values = np.asarray(self.values, float)
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("grid needs at least 2 samples per axis")

    @property
    def dims(self):
        return self.values.shape


def density_at(cloud: GaussianCloud, points: np.ndarray) -> np.ndarray:
    """Opacity-weighted mixture density at world points (...,3)."""
    pts = np.atleast_2d(np.asarray(points, float))
    out = np.zeros(len(pts))
    if len(cloud) == 0:
        return out if np.ndim(points) > 1 else out[0]
    cov = build_covariance(cloud.quat, cloud.scale)
    prec = np.linalg.inv(cov)
    for g in range(len(cloud)):
        d = pts - cloud.mu[g]
        q = np.einsum("ni,ij,nj->n", d, prec[g], d)
        m = q <= MAHALANOBIS_SKIP**2
        out[m] += cloud.opacity[g] * np.exp(-0.5 * q[m])
    return out if np.ndim(points) > 1 else out[0]


def fill_density_grid(cloud: GaussianCloud, origin, spacing: float, dims) -> DensityGrid:
    """Sample the mixture on a regular grid, one Gaussian's support at a time."""
    origin = np.asarray(origin, float)
    nx, ny, nz = dims
    values = np.zeros((nx, ny, nz))
    if len(cloud):
        cov = build_covariance(cloud.quat, cloud.scale)
        prec = np.linalg.inv(cov)
        axes = [origin[i] + spacing * np.arange(dims[i]) for i in range(3)]
        radii = MAHALANOBIS_SKIP * np.sqrt(
            np.maximum(cov[:, [0, 1, 2], [0, 1, 2]], 0.0))
        for g in range(len(cloud)):
            lo = np.maximum(
                np.ceil((cloud.mu[g] - radii[g] - origin) / spacing).astype(int), 0)
            hi = np.minimum(
                np.floor((cloud.mu[g] + radii[g] - origin) / spacing).astype(int) + 1,
                dims)
            if np.any(lo >= hi):
                continue
            dx = axes[0][lo[0]:hi[0]] - cloud.mu[g, 0]
            dy = axes[1][lo[1]:hi[1]] - cloud.mu[g, 1]
            dz = axes[2][lo[2]:hi[2]] - cloud.mu[g, 2]
            P = prec[g]
            q = (P[0, 0] * dx[:, None, None] ** 2
                 + P[1, 1] * dy[None, :, None] ** 2
                 + P[2, 2] * dz[None, None, :] ** 2
                 + 2.0 * P[0, 1] * dx[:, None, None] * dy[None, :, None]
                 + 2.0 * P[0, 2] * dx[:, None, None] * dz[None, None, :]
                 + 2.0 * P[1, 2] * dy[None, :, None] * dz[None, None, :])
            contrib = np.where(q <= MAHALANOBIS_SKIP**2,
                               cloud.opacity[g] * np.exp(-0.5 * q), 0.0)
            values[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += contrib
    return DensityGrid(origin, spacing, values)


def marching_cubes(grid: DensityGrid, iso: float):
    """Classic table-driven isosurface with linear edge interpolation.

    Vertices are welded; degenerate output triangles are dropped. Raises
    EmptySurface when no cell straddles the level.
    """
    from .mesh import TriMesh

    vmin, vmax = grid.values.min(), grid.values.max()
    if not (vmin < iso < vmax):
        raise EmptySurface(f"iso level {iso} outside grid value range [{vmin}, {vmax}]")
    # run in index coordinates and rescale in float64 (the library returns
    # float32 vertices; scaling afterwards keeps representable crossings exact)
    verts, faces, _, _ = measure.marching_cubes(
        grid.values, iso, method="lorensen", allow_degenerate=False)
    verts = verts.astype(np.float64) * grid.spacing + grid.origin
    mesh = TriMesh(verts, faces.astype(np.int64))
    areas = mesh.face_areas()
    keep = areas > 1e-12
    if not keep.all():
        mesh = _drop_faces(mesh, keep)
    return mesh


def _drop_faces(mesh, keep):
    from .mesh import TriMesh

    faces = mesh.faces[keep]
    used = np.unique(faces)
    remap = np.full(mesh.num_vertices, -1, np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(mesh.vertices[used], remap[faces])


def largest_component(mesh):
    """Keep only the face-wise largest connected vertex component."""
    from .mesh import TriMesh

    if mesh.num_faces == 0:
        return mesh
    e = mesh.directed_edges()
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])),
                     shape=(mesh.num_vertices,) * 2)
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp <= 1:
        return mesh
    face_label = labels[mesh.faces[:, 0]]
    counts = np.bincount(face_label, minlength=n_comp)
    return _drop_faces(mesh, face_label == int(np.argmax(counts)))


def extract_mesh(cloud: GaussianCloud, resolution: int = 128,
                 iso_quantile: float = 0.3):
    """Gaussians -> density grid -> isosurface -> largest component."""
    if len(cloud) == 0:
        raise EmptySurface("no Gaussians to mesh")
    margin = 3.0 * float(cloud.scale.max())
    lo = cloud.mu.min(0) - margin
    hi = cloud.mu.max(0) + margin
    extent = hi - lo
    spacing = float(extent.max()) / (resolution - 1)
    dims = np.maximum(np.ceil(extent / spacing).astype(int) + 1, 2)
    grid = fill_density_grid(cloud, lo, spacing, dims)
    positive = grid.values[grid.values > 0.0]
    if positive.size == 0:
        raise EmptySurface("density grid is identically zero")
    iso = float(np.quantile(positive, iso_quantile))
    # keep the surface closed: clamp the level decisively above anything on
    # the outer vertex shells so the isosurface cannot graze the grid boundary
    v = grid.values
    shell = np.zeros(v.shape, bool)
    shell[[0, 1, -2, -1]] = True
    shell[:, [0, 1, -2, -1]] = True
    shell[:, :, [0, 1, -2, -1]] = True
    shell_max = float(v[shell].max())
    if shell_max > 0.0:
        iso = max(iso, float(np.sqrt(shell_max * v.max())))
    mesh = marching_cubes(grid, iso)
    return largest_component(mesh)


@dataclass
class HandleSet:
    indices: np.ndarray        # unique vertex ids
    min_separation: float      # smallest pairwise distance achieved

    def __post_init__(self):
        self.indices = np.asarray(self.indices, np.int64)


def poisson_disk_handles(mesh, target_count: int, seed: int = 0) -> HandleSet:
    """Dart-throw mesh vertices with separation radius derived from the
    surface area budget; the radius is halved once if acceptance collapses."""
    if mesh.num_vertices == 0 or target_count < 1:
        raise ValueError("need a non-empty mesh and target_count >= 1")
    area = float(mesh.face_areas().sum())
    r = np.sqrt(area / target_count) * 0.7 if area > 0 else 0.0
    rng = np.random.default_rng(seed)
    order = rng.permutation(mesh.num_vertices)

    def throw(radius):
        chosen: list[int] = []
        pos = np.empty((0, 3))
        for vid in order:
            p = mesh.vertices[vid]
            if len(chosen) and np.min(np.linalg.norm(pos - p, axis=1)) < radius:
                continue
            chosen.append(int(vid))
            pos = np.vstack([pos, p[None]])
            if len(chosen) >= target_count:
                break
        return chosen

    chosen = throw(r)
    if len(chosen) < target_count / 2 and r > 0:
        r = r / 2.0
        chosen = throw(r)
    pts = mesh.vertices[chosen]
    if len(chosen) >= 2:
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        achieved = float(dist[np.triu_indices(len(chosen), 1)].min())
    else:
        achieved = float(r)
    return HandleSet(np.array(sorted(chosen)), achieved)
