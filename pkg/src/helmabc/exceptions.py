"""Exception types raised across the package."""


class HelmabcError(Exception):
    """Base class for all package errors."""


class InadmissiblePadeError(HelmabcError, ValueError):
    """Raised for a Padé pair outside M = N or M = N + 1, or a degenerate system."""


class GeometryError(HelmabcError, ValueError):
    """Raised for invalid shapes or queries (e.g. a normal requested at a polygon vertex)."""


class MeshError(HelmabcError, ValueError):
    """Raised when a mesh cannot be generated, parsed, or fails validation."""


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SolverError(HelmabcError, RuntimeError):
    """Raised when a linear solve fails or its residual is too large."""


class RayTracingError(HelmabcError, RuntimeError):
    """Raised when a traced ray leaves the domain through numerical drift."""
