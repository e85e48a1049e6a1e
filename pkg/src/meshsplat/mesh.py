"""Indexed triangle mesh with rest-pose and deformed vertex buffers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TriMesh:
    vertices: np.ndarray            # (N,3) rest pose
    faces: np.ndarray               # (M,3) int vertex indices
    deformed: np.ndarray = None     # (N,3), starts equal to rest

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, np.int64).reshape(-1, 3)
        if self.deformed is None:
            self.deformed = self.vertices.copy()
        else:
            self.deformed = np.asarray(self.deformed, float).reshape(-1, 3)
        if len(self.deformed) != len(self.vertices):
            raise ValueError("rest and deformed buffers differ in length")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_corners(self, deformed: bool = False) -> np.ndarray:
        """(M,3,3) vertex positions per face."""
        buf = self.deformed if deformed else self.vertices
        return buf[self.faces]

    def face_areas(self, deformed: bool = False) -> np.ndarray:
        c = self.face_corners(deformed)
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)

    def validate(self, min_area: float = 1e-12):
        areas = self.face_areas()
        if np.any(areas <= min_area):
            bad = int(np.argmin(areas))
            raise ValueError(f"rest facet {bad} is degenerate (area {areas[bad]:g})")

    def directed_edges(self) -> np.ndarray:
        """(E,2) both orientations of every unique mesh edge."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]],
                            f[:, [1, 0]], f[:, [2, 1]], f[:, [0, 2]]])
        return np.unique(e, axis=0)

    def bbox_diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy(), self.deformed.copy())

    def reset_deformation(self):
        self.deformed = self.vertices.copy()


def write_obj(mesh: TriMesh, path, deformed: bool = False) -> None:
    """ASCII OBJ with v/f records only."""
    buf = mesh.deformed if deformed else mesh.vertices
    with open(path, "w") as f:
        for v in buf:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")


def write_ply(mesh: TriMesh, path, deformed: bool = False) -> None:
    """Binary little-endian PLY (positions + faces)."""
    buf = (mesh.deformed if deformed else mesh.vertices).astype("<f4")
    faces = mesh.faces.astype("<i4")
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(buf)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(buf.tobytes())
        counts = np.full((len(faces), 1), 3, np.uint8)
        rows = b"".join(
            counts[i].tobytes() + faces[i].tobytes() for i in range(len(faces))
        )
        f.write(rows)
