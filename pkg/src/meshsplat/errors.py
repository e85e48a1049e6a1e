"""Exception types shared across the package."""


class MeshSplatError(Exception):
    """Base class for all package errors."""


class DegenerateFacet(MeshSplatError):
    """A triangle collapsed: its edges no longer span a plane."""

    def __init__(self, message: str, facet_index: int | None = None):
        if facet_index is not None:
            message = f"facet {facet_index}: {message}"
        super().__init__(message)
        self.facet_index = facet_index


class CollapsedFacet(MeshSplatError):
    """A deformed facet has (numerically) zero area."""

    def __init__(self, message: str, facet_index: int | None = None):
        if facet_index is not None:
            message = f"facet {facet_index}: {message}"
        super().__init__(message)
        self.facet_index = facet_index


class RankDeficient(MeshSplatError):
    """Best-fit rotation is ambiguous (two or more tiny singular values)."""


class ShapeMismatch(MeshSplatError):
    """Array shapes are inconsistent with the network or operation."""


class DimensionMismatch(MeshSplatError):
    """Two images (or buffers) that must match in size do not."""


class EmptySurface(MeshSplatError):
    """No isosurface crosses the requested level."""


class NoConstraints(MeshSplatError):
    """A deformation problem has no handles."""


class SolverSingular(MeshSplatError):
    """Constrained linear system is rank-deficient (e.g. an unconstrained
    disconnected component)."""


class EmptyDataset(MeshSplatError):
    """Dataset has no usable frames."""


class ParseError(MeshSplatError):
    """A structured file failed to parse; message names file and field."""


class MissingImage(MeshSplatError):
    """A dataset frame references an image file that does not exist."""


class SchemaError(MeshSplatError):
    """A structured file parses but lacks required properties."""


class VersionMismatch(MeshSplatError):
    """Checkpoint format version is not recognized."""


class CorruptBlob(MeshSplatError):
    """Checkpoint payload is shorter than its manifest declares."""


class CheckpointError(MeshSplatError):
    """Checkpoint is readable but unsuitable for the requested use."""


class CapacityExceeded(MeshSplatError):
    """Session registry is full."""


class InvalidHandle(MeshSplatError):
    """Drag request referenced a vertex outside the mesh."""
