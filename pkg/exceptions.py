"""
Error categories for the reachability cloud toolkit

Each class carries the CLI exit code of its category:
1 usage, 2 validation, 3 I/O, 4 numeric.
"""


class ReachCloudError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 4


class ParameterError(ReachCloudError):
    """Invalid run parameter (steps, sampler bounds, grid spacing)"""
    exit_code = 1


class DesignValidationError(ReachCloudError):
    """Design violates one or more of its invariants"""
    exit_code = 2

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__('; '.join(self.violations) or 'invalid design')


class ShapeError(ReachCloudError):
    """Activation layout does not match the design's bundle layout"""
    exit_code = 2


class ConfigFileError(ReachCloudError):
    """Design file could not be parsed or violates the schema"""
    exit_code = 2

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f'line {line}')
        if field is not None:
            location.append(f'field {field}')
        prefix = f"[{', '.join(location)}] " if location else ''
        super().__init__(f'{prefix}{message}')


class CloudFormatError(ReachCloudError):
    """Malformed or truncated cloud/mesh file"""
    exit_code = 3

    def __init__(self, message, offset=None):
        self.offset = offset
        suffix = f' (byte offset {offset})' if offset is not None else ''
        super().__init__(f'{message}{suffix}')


class DomainError(ReachCloudError):
    """Argument outside the mathematical domain of an operation"""
    exit_code = 4


class DegenerateHullError(ReachCloudError):
    """Point set spans fewer than three dimensions"""
    exit_code = 4

    def __init__(self, message, dimension):
        self.dimension = dimension
        super().__init__(f'{message} (affine dimension {dimension})')


class EmptyShapeError(ReachCloudError):
    """No Delaunay tetrahedron survives the alpha filter"""
    exit_code = 4


class MeshTopologyError(ReachCloudError):
    """Mesh is not closed: some edges are not matched by an opposite edge"""
    exit_code = 4

    def __init__(self, boundary_edges):
        self.boundary_edges = [tuple(int(v) for v in edge) for edge in boundary_edges]
        preview = ', '.join(str(e) for e in self.boundary_edges[:10])
        more = '' if len(self.boundary_edges) <= 10 else ', ...'
        super().__init__(f'mesh is not watertight; boundary edges: {preview}{more}')


class ExportError(ReachCloudError):
    """Output directory could not be written; partial output was removed"""
    exit_code = 3
